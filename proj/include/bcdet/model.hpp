#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bcdet/blocks.hpp"
#include "bcdet/tensor.hpp"

namespace bcdet {

struct ScalingCoefficients {
  double alpha = 1.2;   // depth base
  double beta = 1.1;    // width base
  double gamma = 1.15;  // resolution base
  double phi = 0.0;     // user coefficient
};

struct ScaleFactors {
  double depth = 1.0, width = 1.0, resolution = 1.0;
};

// d = alpha^phi, w = beta^phi, r = gamma^phi. Bases must be >= 1.
ScaleFactors compound_scale(const ScalingCoefficients& c);
// alpha * beta^2 * gamma^2; architectures are expected to keep this near 2.
double scaling_constraint(const ScalingCoefficients& c);
bool constraint_in_band(double value);  // [1.8, 2.2]

struct BackboneConfig {
  std::vector<int> stage_depths{1, 2, 2, 3, 1};
  std::vector<int> stage_widths{16, 24, 48, 96, 192};
  std::vector<int> stage_strides{1, 2, 2, 2, 2};  // product 16; stem adds x2
  int stem_width = 16;
  int head_width = 320;  // C6 channels before width scaling
};

struct ModelConfig {
  ScalingCoefficients scaling;
  BackboneConfig backbone;
  int encoder_channels = 512;
  std::vector<int> encoder_dilations{2, 4, 6, 8};
  int reg_head_depth = 4;
  int cls_head_depth = 2;
  int num_classes = 3;
  std::vector<double> anchor_sizes{32, 64, 128, 256, 512};
  int input_resolution = 416;  // base; resolution scaling applies on top
  Activation activation = Activation::mish;
};

// Nearest multiple of 8 (half rounds up), minimum 8.
int round8(double x);
// ceil(base * depth_factor)
int scaled_depth(int base, double d);
// Base resolution times gamma^phi, rounded up to a multiple of 32.
int effective_resolution(const ModelConfig& cfg);
// Anchor edge lengths at the resolution the model actually runs at.
std::vector<double> effective_anchor_sizes(const ModelConfig& cfg,
                                           int resolution);

// Key-value text round-trip for ModelConfig.
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(std::istream& in);
ModelConfig load_model_config(const std::string& path);
void save_model_config(const std::string& path, const ModelConfig& cfg);

struct ModelOutput {
  Tensor cls_logits;  // [N, A*K, Hf, Wf]
  Tensor reg_deltas;  // [N, A*4, Hf, Wf]
  Tensor obj_logits;  // [N, A,   Hf, Wf]
};

// Stride-32 feature extractor: strided 3x3 stem, stages of depthwise
// separable blocks (stage entry strided via the depthwise conv), and a 1x1
// expansion to the head width. Depths/widths follow the compound scaling
// factors.
struct Backbone {
  Conv2d stem;
  BatchNorm2d stem_bn;
  std::vector<DSConvModule> blocks;
  Conv2d head;
  BatchNorm2d head_bn;
  Activation act;
  int out_channels = 0;

  static Backbone make(const BackboneConfig& cfg, const ScaleFactors& f,
                       Activation act, SplitMix64& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  int64_t macs(int64_t h, int64_t w) const;
};

struct DilatedEncoder {
  Projector projector;
  std::vector<DilatedResidualBlock> blocks;

  static DilatedEncoder make(int cin, int channels,
                             const std::vector<int>& dilations, Activation act,
                             SplitMix64& rng);
  Tensor forward(const Tensor& c6, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  int64_t macs(int64_t h, int64_t w) const;
};

// Two parallel heads over P5: regression (reg_head_depth DS modules ->
// 1x1 deltas + 1x1 objectness) and classification (cls_head_depth DS
// modules -> 1x1 class logits).
struct Decoder {
  std::vector<DSConvModule> reg_tower, cls_tower;
  Conv2d reg_pred, obj_pred, cls_pred;
  int anchors_per_cell = 0, num_classes = 0;

  static Decoder make(int channels, int reg_depth, int cls_depth, int anchors,
                      int classes, Activation act, SplitMix64& rng);
  ModelOutput forward(const Tensor& p5, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  int64_t macs(int64_t h, int64_t w) const;
};

class Detector {
 public:
  Detector(const ModelConfig& cfg, uint64_t seed);

  // images: [N, 3, R, R] with R divisible by 32. Deterministic in
  // inference mode.
  ModelOutput forward(const Tensor& images, bool training);

  const ModelConfig& config() const { return cfg_; }
  int backbone_channels() const { return backbone_.out_channels; }

  // Ordered parameter/buffer registry; drives checkpoints and SGD.
  ParamList parameters() const;
  int64_t param_count() const;              // analytic, trainable only
  int64_t flops(int resolution) const;      // 2 * MACs at the given input

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  DilatedEncoder encoder_;
  Decoder decoder_;
};

// score[n,a,k,h,w] = sigmoid(cls[n,a*K+k,h,w]) * sigmoid(obj[n,a,h,w]).
// Output shape [N, A, K, Hf, Wf], values in (0,1).
Tensor fuse_scores(const Tensor& cls_logits, const Tensor& obj_logits,
                   int num_classes);
// log of the fused score, computed via softplus for stability.
Tensor fuse_scores_log(const Tensor& cls_logits, const Tensor& obj_logits,
                       int num_classes);

}  // namespace bcdet
