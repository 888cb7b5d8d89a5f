#include "bcdet/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace bcdet {

// ---- Conv2d ----

Conv2d Conv2d::make(int cin, int cout, int kernel, int stride, int padding,
                    int dilation, int groups, bool with_bias,
                    SplitMix64& rng) {
  if (cin <= 0 || cout <= 0)
    throw std::invalid_argument("conv: channel counts must be positive");
  Conv2d c;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.dilation = dilation;
  c.groups = groups;
  const int fan_in = (cin / groups) * kernel * kernel;
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  c.weight = Tensor::randn({cout, cin / groups, kernel, kernel}, rng, stddev,
                           true);
  if (with_bias) c.bias = Tensor({cout}, true);
  return c;
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, padding, dilation, groups);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true, true});
}

int64_t Conv2d::param_count() const {
  int64_t n = static_cast<int64_t>(out_channels) * (in_channels / groups) *
              kernel * kernel;
  if (bias.defined()) n += out_channels;
  return n;
}

void Conv2d::out_size(int64_t h, int64_t w, int64_t& ho, int64_t& wo) const {
  ho = (h + 2 * padding - static_cast<int64_t>(dilation) * (kernel - 1) - 1) /
           stride +
       1;
  wo = (w + 2 * padding - static_cast<int64_t>(dilation) * (kernel - 1) - 1) /
           stride +
       1;
}

int64_t Conv2d::macs(int64_t h, int64_t w) const {
  int64_t ho, wo;
  out_size(h, w, ho, wo);
  return ho * wo * static_cast<int64_t>(out_channels) *
         (in_channels / groups) * kernel * kernel;
}

// ---- BatchNorm2d ----

BatchNorm2d BatchNorm2d::make(int channels) {
  BatchNorm2d bn;
  bn.scale = Tensor::full({channels}, 1.0, true);
  bn.shift = Tensor({channels}, true);
  bn.running_mean = Tensor({channels});
  bn.running_var = Tensor::full({channels}, 1.0);
  return bn;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return batchnorm2d(x, scale, shift, running_mean, running_var, training,
                     momentum, eps);
}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".scale", scale, true, false});
  out.push_back({prefix + ".shift", shift, true, false});
  out.push_back({prefix + ".running_mean", running_mean, false, false});
  out.push_back({prefix + ".running_var", running_var, false, false});
}

// ---- DSConvModule ----

DSConvModule DSConvModule::make(int cin, int cout, int stride, Activation act,
                                SplitMix64& rng, int kernel) {
  DSConvModule m;
  m.in_channels = cin;
  m.out_channels = cout;
  m.kernel = kernel;
  m.stride = stride;
  m.act = act;
  m.depthwise = Conv2d::make(cin, cin, kernel, stride, kernel / 2, 1, cin,
                             false, rng);
  m.pointwise = Conv2d::make(cin, cout, 1, 1, 0, 1, 1, false, rng);
  m.bn1 = BatchNorm2d::make(cin);
  m.bn2 = BatchNorm2d::make(cout);
  return m;
}

Tensor DSConvModule::forward(const Tensor& x, bool training) {
  if (x.dim(1) != in_channels)
    throw std::invalid_argument(
        "ds_conv: expected " + std::to_string(in_channels) +
        " input channels, got " + std::to_string(x.dim(1)));
  Tensor h = activation(bn1.forward(depthwise.forward(x), training), act);
  return activation(bn2.forward(pointwise.forward(h), training), act);
}

void DSConvModule::collect(const std::string& prefix, ParamList& out) const {
  depthwise.collect(prefix + ".dw", out);
  bn1.collect(prefix + ".bn1", out);
  pointwise.collect(prefix + ".pw", out);
  bn2.collect(prefix + ".bn2", out);
}

int64_t DSConvModule::param_count() const {
  return depthwise.param_count() + pointwise.param_count() +
         bn1.param_count() + bn2.param_count();
}

int64_t DSConvModule::state_count() const {
  return param_count() + bn1.buffer_count() + bn2.buffer_count();
}

int64_t DSConvModule::macs(int64_t h, int64_t w) const {
  int64_t ho, wo;
  depthwise.out_size(h, w, ho, wo);
  return depthwise.macs(h, w) + pointwise.macs(ho, wo);
}

// ---- DilatedResidualBlock ----

DilatedResidualBlock DilatedResidualBlock::make(int channels, int dilation,
                                                Activation act,
                                                SplitMix64& rng) {
  if (channels % 4 != 0)
    throw std::invalid_argument("residual block channels must be divisible by 4");
  DilatedResidualBlock b;
  b.channels = channels;
  b.mid_channels = channels / 4;  // reduction rate of 4
  b.dilation = dilation;
  b.act = act;
  b.reduce = Conv2d::make(channels, b.mid_channels, 1, 1, 0, 1, 1, false, rng);
  b.dilated = Conv2d::make(b.mid_channels, b.mid_channels, 3, 1, dilation,
                           dilation, 1, false, rng);
  b.restore = Conv2d::make(b.mid_channels, channels, 1, 1, 0, 1, 1, false, rng);
  b.bn1 = BatchNorm2d::make(b.mid_channels);
  b.bn2 = BatchNorm2d::make(b.mid_channels);
  b.bn3 = BatchNorm2d::make(channels);
  return b;
}

Tensor DilatedResidualBlock::forward(const Tensor& x, bool training) {
  if (x.dim(1) != channels)
    throw std::invalid_argument(
        "residual block: expected " + std::to_string(channels) +
        " channels, got " + std::to_string(x.dim(1)));
  Tensor h = activation(bn1.forward(reduce.forward(x), training), act);
  h = activation(bn2.forward(dilated.forward(h), training), act);
  h = activation(bn3.forward(restore.forward(h), training), act);
  return add(x, h);
}

void DilatedResidualBlock::collect(const std::string& prefix,
                                   ParamList& out) const {
  reduce.collect(prefix + ".reduce", out);
  bn1.collect(prefix + ".bn1", out);
  dilated.collect(prefix + ".dilated", out);
  bn2.collect(prefix + ".bn2", out);
  restore.collect(prefix + ".restore", out);
  bn3.collect(prefix + ".bn3", out);
}

int64_t DilatedResidualBlock::param_count() const {
  return reduce.param_count() + dilated.param_count() +
         restore.param_count() + bn1.param_count() + bn2.param_count() +
         bn3.param_count();
}

int64_t DilatedResidualBlock::macs(int64_t h, int64_t w) const {
  return reduce.macs(h, w) + dilated.macs(h, w) + restore.macs(h, w);
}

// ---- Projector ----

Projector Projector::make(int cin, int cout, SplitMix64& rng) {
  Projector p;
  p.in_channels = cin;
  p.out_channels = cout;
  p.conv1 = Conv2d::make(cin, cout, 1, 1, 0, 1, 1, false, rng);
  p.conv3 = Conv2d::make(cout, cout, 3, 1, 1, 1, 1, false, rng);
  p.bn1 = BatchNorm2d::make(cout);
  p.bn2 = BatchNorm2d::make(cout);
  return p;
}

Tensor Projector::forward(const Tensor& x, bool training) {
  Tensor h = bn1.forward(conv1.forward(x), training);
  return bn2.forward(conv3.forward(h), training);
}

void Projector::collect(const std::string& prefix, ParamList& out) const {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv3.collect(prefix + ".conv3", out);
  bn2.collect(prefix + ".bn2", out);
}

int64_t Projector::param_count() const {
  return conv1.param_count() + conv3.param_count() + bn1.param_count() +
         bn2.param_count();
}

int64_t Projector::macs(int64_t h, int64_t w) const {
  return conv1.macs(h, w) + conv3.macs(h, w);
}

int64_t standard_conv_params(int cin, int cout, int kernel) {
  return static_cast<int64_t>(cin) * kernel * kernel * cout;
}

int64_t ds_conv_params(int cin, int cout, int kernel) {
  return static_cast<int64_t>(cin) * kernel * kernel +
         static_cast<int64_t>(cin) * cout;
}

}  // namespace bcdet
