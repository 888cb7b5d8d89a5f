#include "bcdet/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bcdet/checkpoint.hpp"

namespace bcdet {

ScaleFactors compound_scale(const ScalingCoefficients& c) {
  if (c.alpha < 1.0 || c.beta < 1.0 || c.gamma < 1.0)
    throw std::invalid_argument(
        "compound scaling bases must all be >= 1, got alpha=" +
        std::to_string(c.alpha) + " beta=" + std::to_string(c.beta) +
        " gamma=" + std::to_string(c.gamma));
  return {std::pow(c.alpha, c.phi), std::pow(c.beta, c.phi),
          std::pow(c.gamma, c.phi)};
}

double scaling_constraint(const ScalingCoefficients& c) {
  return c.alpha * c.beta * c.beta * c.gamma * c.gamma;
}

bool constraint_in_band(double value) { return value >= 1.8 && value <= 2.2; }

int round8(double x) {
  const int r = static_cast<int>(8.0 * std::floor(x / 8.0 + 0.5));
  return r < 8 ? 8 : r;
}

int scaled_depth(int base, double d) {
  return static_cast<int>(std::ceil(static_cast<double>(base) * d));
}

int effective_resolution(const ModelConfig& cfg) {
  const double r = std::pow(cfg.scaling.gamma, cfg.scaling.phi);
  const double scaled = static_cast<double>(cfg.input_resolution) * r;
  return static_cast<int>(32.0 * std::ceil(scaled / 32.0));
}

std::vector<double> effective_anchor_sizes(const ModelConfig& cfg,
                                           int resolution) {
  std::vector<double> sizes = cfg.anchor_sizes;
  const double scale = static_cast<double>(resolution) / 416.0;
  for (double& s : sizes) s *= scale;
  return sizes;
}

// ---- config text format ----

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>)
      out += fmt_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  size_t e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad integer '" + item + "' in " +
                                  key);
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s,
                                      const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad number '" + item + "' in " +
                                  key);
    }
  }
  return out;
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.input_resolution % 32 != 0)
    throw std::invalid_argument("config: input_resolution " +
                                std::to_string(cfg.input_resolution) +
                                " must be divisible by 32");
  const auto& b = cfg.backbone;
  if (b.stage_depths.size() != b.stage_widths.size() ||
      b.stage_depths.size() != b.stage_strides.size())
    throw std::invalid_argument("config: stage lists must have equal length");
  int prod = 1;
  for (int s : b.stage_strides) prod *= s;
  if (prod * 2 != 32)  // stem contributes the remaining factor of 2
    throw std::invalid_argument(
        "config: stage strides multiply to " + std::to_string(prod) +
        "; with the stride-2 stem the total downsample must be 32");
  if (cfg.encoder_channels % 4 != 0)
    throw std::invalid_argument("config: encoder_channels must be divisible by 4");
  if (cfg.num_classes < 1)
    throw std::invalid_argument("config: num_classes must be >= 1");
  if (cfg.reg_head_depth < 1 || cfg.cls_head_depth < 1)
    throw std::invalid_argument("config: head depths must be >= 1");
  if (cfg.anchor_sizes.empty())
    throw std::invalid_argument("config: anchor_sizes must be nonempty");
}

}  // namespace

std::string serialize_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "phi = " << fmt_double(cfg.scaling.phi) << "\n";
  os << "alpha = " << fmt_double(cfg.scaling.alpha) << "\n";
  os << "beta = " << fmt_double(cfg.scaling.beta) << "\n";
  os << "gamma = " << fmt_double(cfg.scaling.gamma) << "\n";
  os << "stage_depths = " << join(cfg.backbone.stage_depths) << "\n";
  os << "stage_widths = " << join(cfg.backbone.stage_widths) << "\n";
  os << "stage_strides = " << join(cfg.backbone.stage_strides) << "\n";
  os << "stem_width = " << cfg.backbone.stem_width << "\n";
  os << "head_width = " << cfg.backbone.head_width << "\n";
  os << "encoder_channels = " << cfg.encoder_channels << "\n";
  os << "encoder_dilations = " << join(cfg.encoder_dilations) << "\n";
  os << "reg_head_depth = " << cfg.reg_head_depth << "\n";
  os << "cls_head_depth = " << cfg.cls_head_depth << "\n";
  os << "num_classes = " << cfg.num_classes << "\n";
  os << "anchor_sizes = " << join(cfg.anchor_sizes) << "\n";
  os << "input_resolution = " << cfg.input_resolution << "\n";
  os << "activation = " << activation_name(cfg.activation) << "\n";
  return os.str();
}

ModelConfig parse_model_config(std::istream& in) {
  ModelConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "phi") cfg.scaling.phi = std::stod(val);
      else if (key == "alpha") cfg.scaling.alpha = std::stod(val);
      else if (key == "beta") cfg.scaling.beta = std::stod(val);
      else if (key == "gamma") cfg.scaling.gamma = std::stod(val);
      else if (key == "stage_depths") cfg.backbone.stage_depths = parse_int_list(val, key);
      else if (key == "stage_widths") cfg.backbone.stage_widths = parse_int_list(val, key);
      else if (key == "stage_strides") cfg.backbone.stage_strides = parse_int_list(val, key);
      else if (key == "stem_width") cfg.backbone.stem_width = std::stoi(val);
      else if (key == "head_width") cfg.backbone.head_width = std::stoi(val);
      else if (key == "encoder_channels") cfg.encoder_channels = std::stoi(val);
      else if (key == "encoder_dilations") cfg.encoder_dilations = parse_int_list(val, key);
      else if (key == "reg_head_depth") cfg.reg_head_depth = std::stoi(val);
      else if (key == "cls_head_depth") cfg.cls_head_depth = std::stoi(val);
      else if (key == "num_classes") cfg.num_classes = std::stoi(val);
      else if (key == "anchor_sizes") cfg.anchor_sizes = parse_double_list(val, key);
      else if (key == "input_resolution") cfg.input_resolution = std::stoi(val);
      else if (key == "activation") cfg.activation = activation_from_name(val);
      else
        throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": bad value '" + val + "' for " + key);
    }
  }
  validate_config(cfg);
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_model_config(in);
}

void save_model_config(const std::string& path, const ModelConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path);
  out << serialize_model_config(cfg);
}

// ---- Backbone ----

Backbone Backbone::make(const BackboneConfig& cfg, const ScaleFactors& f,
                        Activation act, SplitMix64& rng) {
  Backbone bb;
  bb.act = act;
  const int stem_w = round8(cfg.stem_width * f.width);
  bb.stem = Conv2d::make(3, stem_w, 3, 2, 1, 1, 1, false, rng);
  bb.stem_bn = BatchNorm2d::make(stem_w);
  int prev = stem_w;
  for (size_t s = 0; s < cfg.stage_depths.size(); ++s) {
    const int width = round8(cfg.stage_widths[s] * f.width);
    const int depth = scaled_depth(cfg.stage_depths[s], f.depth);
    if (width <= 0 || depth <= 0)
      throw std::invalid_argument("backbone: non-positive scaled stage size");
    for (int b = 0; b < depth; ++b) {
      const int stride = b == 0 ? cfg.stage_strides[s] : 1;
      bb.blocks.push_back(DSConvModule::make(prev, width, stride, act, rng));
      prev = width;
    }
  }
  bb.out_channels = round8(cfg.head_width * f.width);
  bb.head = Conv2d::make(prev, bb.out_channels, 1, 1, 0, 1, 1, false, rng);
  bb.head_bn = BatchNorm2d::make(bb.out_channels);
  return bb;
}

Tensor Backbone::forward(const Tensor& x, bool training) {
  Tensor h = activation(stem_bn.forward(stem.forward(x), training), act);
  for (auto& b : blocks) h = b.forward(h, training);
  return activation(head_bn.forward(head.forward(h), training), act);
}

void Backbone::collect(const std::string& prefix, ParamList& out) const {
  stem.collect(prefix + ".stem", out);
  stem_bn.collect(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  head.collect(prefix + ".head", out);
  head_bn.collect(prefix + ".head_bn", out);
}

int64_t Backbone::param_count() const {
  int64_t n = stem.param_count() + stem_bn.param_count() +
              head.param_count() + head_bn.param_count();
  for (const auto& b : blocks) n += b.param_count();
  return n;
}

int64_t Backbone::macs(int64_t h, int64_t w) const {
  int64_t total = stem.macs(h, w);
  stem.out_size(h, w, h, w);
  for (const auto& b : blocks) {
    total += b.macs(h, w);
    b.depthwise.out_size(h, w, h, w);
  }
  total += head.macs(h, w);
  return total;
}

// ---- DilatedEncoder ----

DilatedEncoder DilatedEncoder::make(int cin, int channels,
                                    const std::vector<int>& dilations,
                                    Activation act, SplitMix64& rng) {
  DilatedEncoder enc;
  enc.projector = Projector::make(cin, channels, rng);
  for (int d : dilations)
    enc.blocks.push_back(DilatedResidualBlock::make(channels, d, act, rng));
  return enc;
}

Tensor DilatedEncoder::forward(const Tensor& c6, bool training) {
  Tensor h = projector.forward(c6, training);
  for (auto& b : blocks) h = b.forward(h, training);
  return h;
}

void DilatedEncoder::collect(const std::string& prefix, ParamList& out) const {
  projector.collect(prefix + ".projector", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

int64_t DilatedEncoder::param_count() const {
  int64_t n = projector.param_count();
  for (const auto& b : blocks) n += b.param_count();
  return n;
}

int64_t DilatedEncoder::macs(int64_t h, int64_t w) const {
  int64_t n = projector.macs(h, w);
  for (const auto& b : blocks) n += b.macs(h, w);
  return n;
}

// ---- Decoder ----

Decoder Decoder::make(int channels, int reg_depth, int cls_depth, int anchors,
                      int classes, Activation act, SplitMix64& rng) {
  Decoder d;
  d.anchors_per_cell = anchors;
  d.num_classes = classes;
  for (int i = 0; i < reg_depth; ++i)
    d.reg_tower.push_back(DSConvModule::make(channels, channels, 1, act, rng));
  for (int i = 0; i < cls_depth; ++i)
    d.cls_tower.push_back(DSConvModule::make(channels, channels, 1, act, rng));
  d.reg_pred = Conv2d::make(channels, anchors * 4, 1, 1, 0, 1, 1, true, rng);
  d.obj_pred = Conv2d::make(channels, anchors, 1, 1, 0, 1, 1, true, rng);
  d.cls_pred = Conv2d::make(channels, anchors * classes, 1, 1, 0, 1, 1, true,
                            rng);
  // Start classification scores near a small prior so the focal loss is not
  // swamped by the negative anchors on the first iterations.
  const double prior = 0.01;
  for (double& b : d.cls_pred.bias.data())
    b = -std::log((1.0 - prior) / prior);
  return d;
}

ModelOutput Decoder::forward(const Tensor& p5, bool training) {
  Tensor r = p5;
  for (auto& m : reg_tower) r = m.forward(r, training);
  Tensor c = p5;
  for (auto& m : cls_tower) c = m.forward(c, training);
  ModelOutput out;
  out.reg_deltas = reg_pred.forward(r);
  out.obj_logits = obj_pred.forward(r);
  out.cls_logits = cls_pred.forward(c);
  return out;
}

void Decoder::collect(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < reg_tower.size(); ++i)
    reg_tower[i].collect(prefix + ".reg" + std::to_string(i), out);
  for (size_t i = 0; i < cls_tower.size(); ++i)
    cls_tower[i].collect(prefix + ".cls" + std::to_string(i), out);
  reg_pred.collect(prefix + ".reg_pred", out);
  obj_pred.collect(prefix + ".obj_pred", out);
  cls_pred.collect(prefix + ".cls_pred", out);
}

int64_t Decoder::param_count() const {
  int64_t n = reg_pred.param_count() + obj_pred.param_count() +
              cls_pred.param_count();
  for (const auto& m : reg_tower) n += m.param_count();
  for (const auto& m : cls_tower) n += m.param_count();
  return n;
}

int64_t Decoder::macs(int64_t h, int64_t w) const {
  int64_t n = reg_pred.macs(h, w) + obj_pred.macs(h, w) + cls_pred.macs(h, w);
  for (const auto& m : reg_tower) n += m.macs(h, w);
  for (const auto& m : cls_tower) n += m.macs(h, w);
  return n;
}

// ---- Detector ----

Detector::Detector(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  validate_config(cfg);
  const ScaleFactors f = compound_scale(cfg.scaling);
  SplitMix64 rng_bb = substream(seed, 1);
  SplitMix64 rng_enc = substream(seed, 2);
  SplitMix64 rng_dec = substream(seed, 3);
  backbone_ = Backbone::make(cfg.backbone, f, cfg.activation, rng_bb);
  encoder_ = DilatedEncoder::make(backbone_.out_channels, cfg.encoder_channels,
                                  cfg.encoder_dilations, cfg.activation,
                                  rng_enc);
  decoder_ = Decoder::make(cfg.encoder_channels, cfg.reg_head_depth,
                           cfg.cls_head_depth,
                           static_cast<int>(cfg.anchor_sizes.size()),
                           cfg.num_classes, cfg.activation, rng_dec);
}

ModelOutput Detector::forward(const Tensor& images, bool training) {
  if (images.ndim() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("detector: images must be [N,3,R,R], got " +
                                shape_str(images.shape()));
  if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
    throw std::invalid_argument(
        "detector: resolution " + std::to_string(images.dim(2)) + "x" +
        std::to_string(images.dim(3)) + " not divisible by 32");
  Tensor c6 = backbone_.forward(images, training);
  Tensor p5 = encoder_.forward(c6, training);
  return decoder_.forward(p5, training);
}

ParamList Detector::parameters() const {
  ParamList out;
  backbone_.collect("backbone", out);
  encoder_.collect("encoder", out);
  decoder_.collect("decoder", out);
  return out;
}

int64_t Detector::param_count() const {
  return backbone_.param_count() + encoder_.param_count() +
         decoder_.param_count();
}

int64_t Detector::flops(int resolution) const {
  const int64_t r = resolution;
  const int64_t rf = r / 32;
  return 2 * (backbone_.macs(r, r) + encoder_.macs(rf, rf) +
              decoder_.macs(rf, rf));
}

void Detector::save(const std::string& path) const {
  std::vector<std::pair<std::string, Tensor>> entries;
  for (const auto& p : parameters()) entries.emplace_back(p.name, p.tensor);
  save_checkpoint(path, entries);
}

void Detector::load(const std::string& path) {
  auto entries = load_checkpoint(path);
  std::map<std::string, Tensor> by_name(entries.begin(), entries.end());
  for (auto& p : parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing tensor " + p.name);
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name +
                               ": file has " + shape_str(it->second.shape()) +
                               ", model has " + shape_str(p.tensor.shape()));
    auto src = it->second.data();
    auto dst = p.tensor.data();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw std::runtime_error("checkpoint: unexpected tensor " +
                             by_name.begin()->first);
}

// ---- score fusion ----

namespace {

std::vector<int64_t> obj_broadcast_map(int64_t n, int64_t a, int64_t k,
                                       int64_t hw) {
  std::vector<int64_t> map;
  map.reserve(static_cast<size_t>(n * a * k * hw));
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ai = 0; ai < a; ++ai)
      for (int64_t ki = 0; ki < k; ++ki)
        for (int64_t p = 0; p < hw; ++p)
          map.push_back((ni * a + ai) * hw + p);
  return map;
}

void fusion_dims(const Tensor& cls, const Tensor& obj, int num_classes,
                 int64_t& n, int64_t& a, int64_t& hf, int64_t& wf) {
  if (cls.ndim() != 4 || obj.ndim() != 4)
    throw std::invalid_argument("fuse_scores: expects 4-D logit maps");
  n = cls.dim(0);
  a = obj.dim(1);
  hf = cls.dim(2);
  wf = cls.dim(3);
  if (obj.dim(0) != n || obj.dim(2) != hf || obj.dim(3) != wf ||
      cls.dim(1) != a * num_classes)
    throw std::invalid_argument(
        "fuse_scores: incompatible shapes " + shape_str(cls.shape()) +
        " vs " + shape_str(obj.shape()) + " with K=" +
        std::to_string(num_classes));
}

}  // namespace

Tensor fuse_scores(const Tensor& cls_logits, const Tensor& obj_logits,
                   int num_classes) {
  int64_t n, a, hf, wf;
  fusion_dims(cls_logits, obj_logits, num_classes, n, a, hf, wf);
  const int64_t k = num_classes;
  // [N, A*K, Hf, Wf] flattens to the same order as [N, A, K, Hf, Wf].
  Tensor sc = reshape(sigmoid(cls_logits), {n, a, k, hf, wf});
  Tensor so = gather(sigmoid(obj_logits), obj_broadcast_map(n, a, k, hf * wf),
                     {n, a, k, hf, wf});
  return mul(sc, so);
}

Tensor fuse_scores_log(const Tensor& cls_logits, const Tensor& obj_logits,
                       int num_classes) {
  int64_t n, a, hf, wf;
  fusion_dims(cls_logits, obj_logits, num_classes, n, a, hf, wf);
  const int64_t k = num_classes;
  Tensor lc = reshape(log_sigmoid(cls_logits), {n, a, k, hf, wf});
  Tensor lo = gather(log_sigmoid(obj_logits),
                     obj_broadcast_map(n, a, k, hf * wf), {n, a, k, hf, wf});
  return add(lc, lo);
}

}  // namespace bcdet
