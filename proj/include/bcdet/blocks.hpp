#pragma once

#include <string>
#include <vector>

#include "bcdet/tensor.hpp"

namespace bcdet {

// One named tensor of a module: trainable parameter or persistent buffer
// (BN running stats). Ordered registries drive the checkpoint format, the
// optimizer and the parameter-count oracle.
struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  bool decay = true;  // weight decay applies (BN affine params are exempt)
};

using ParamList = std::vector<ParamEntry>;

struct Conv2d {
  Tensor weight;  // [Cout, Cin/groups, K, K]
  Tensor bias;    // undefined when the conv feeds a BN
  int in_channels = 0, out_channels = 0, kernel = 1;
  int stride = 1, padding = 0, dilation = 1, groups = 1;

  static Conv2d make(int cin, int cout, int kernel, int stride, int padding,
                     int dilation, int groups, bool with_bias,
                     SplitMix64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  // Multiply-accumulates for one forward pass at the given input size.
  int64_t macs(int64_t h, int64_t w) const;
  void out_size(int64_t h, int64_t w, int64_t& ho, int64_t& wo) const;
};

struct BatchNorm2d {
  Tensor scale, shift;               // trainable
  Tensor running_mean, running_var;  // buffers
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm2d make(int channels);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const { return 2 * scale.dim(0); }
  int64_t buffer_count() const { return 2 * scale.dim(0); }
};

// Depthwise separable unit: depthwise 3x3 -> BN -> act -> pointwise 1x1 ->
// BN -> act. Spatial dims preserved at stride 1; the depthwise stage carries
// any stride.
struct DSConvModule {
  Conv2d depthwise, pointwise;
  BatchNorm2d bn1, bn2;
  Activation act = Activation::mish;
  int in_channels = 0, out_channels = 0, kernel = 3, stride = 1;

  static DSConvModule make(int cin, int cout, int stride, Activation act,
                           SplitMix64& rng, int kernel = 3);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;   // trainable only
  int64_t state_count() const;   // trainable + BN buffers
  int64_t macs(int64_t h, int64_t w) const;
};

// 1x1 reduce (channels/4) -> 3x3 dilated -> 1x1 restore, each conv followed
// by BN + act; residual addition around the branch.
struct DilatedResidualBlock {
  Conv2d reduce, dilated, restore;
  BatchNorm2d bn1, bn2, bn3;
  Activation act = Activation::mish;
  int channels = 0, mid_channels = 0, dilation = 1;

  static DilatedResidualBlock make(int channels, int dilation, Activation act,
                                   SplitMix64& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  int64_t macs(int64_t h, int64_t w) const;
};

// Backbone-to-encoder projection: 1x1 conv + BN, then 3x3 conv + BN.
struct Projector {
  Conv2d conv1, conv3;
  BatchNorm2d bn1, bn2;
  int in_channels = 0, out_channels = 0;

  static Projector make(int cin, int cout, SplitMix64& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  int64_t param_count() const;
  int64_t macs(int64_t h, int64_t w) const;
};

// Trainable parameters of a standard KxK conv vs its depthwise separable
// factorization (bias-free).
int64_t standard_conv_params(int cin, int cout, int kernel);
int64_t ds_conv_params(int cin, int cout, int kernel);

}  // namespace bcdet
