#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "bcdet/blocks.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bcdet;

namespace {

void fill_constant(Tensor t, double v) {
  for (double& x : t.data()) x = v;
}

// Spatial support (nonzero rows/cols) of channel-summed activations.
int support_width(const Tensor& t) {
  const int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  int lo = static_cast<int>(w), hi = -1;
  for (int64_t x = 0; x < w; ++x) {
    double col = 0;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        col += std::fabs(
            t.data()[static_cast<size_t>((ch * h + y) * w + x)]);
    if (col > 1e-12) {
      lo = std::min<int>(lo, static_cast<int>(x));
      hi = std::max<int>(hi, static_cast<int>(x));
    }
  }
  return hi < lo ? 0 : hi - lo + 1;
}

Tensor impulse(int channels, int hw) {
  Tensor t({1, channels, hw, hw});
  t.data()[static_cast<size_t>((hw / 2) * hw + hw / 2)] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("DSConvModule parameter accounting") {
  SplitMix64 rng(1);
  auto m = DSConvModule::make(16, 24, 1, Activation::mish, rng);
  const int64_t in = 16, out = 24, k = 3;
  CHECK(m.param_count() == in * k * k + in * out + 2 * in + 2 * out);
  CHECK(m.state_count() ==
        in * k * k + in * out + 2 * (2 * in) + 2 * (2 * out));
}

TEST_CASE("DSConvModule stage order and zero fixed point") {
  SplitMix64 rng(2);
  auto m = DSConvModule::make(4, 4, 1, Activation::mish, rng);
  Tensor zeros({2, 4, 5, 5});
  Tensor out = m.forward(zeros, true);
  for (double v : out.data()) CHECK(v == 0.0);

  // Full forward equals the stages composed by hand (inference mode so BN
  // state is untouched).
  SplitMix64 rng2(3);
  Tensor x = Tensor::randn({1, 4, 6, 6}, rng2);
  Tensor full = m.forward(x, false);
  Tensor manual = m.depthwise.forward(x);
  manual = m.bn1.forward(manual, false);
  manual = activation(manual, m.act);
  manual = m.pointwise.forward(manual);
  manual = m.bn2.forward(manual, false);
  manual = activation(manual, m.act);
  REQUIRE(full.shape() == manual.shape());
  for (size_t i = 0; i < full.data().size(); ++i)
    CHECK(full.data()[i] == manual.data()[i]);
}

TEST_CASE("DSConvModule depthwise stage keeps channels independent") {
  SplitMix64 rng(4);
  auto m = DSConvModule::make(3, 3, 1, Activation::mish, rng);
  Tensor x = Tensor::randn({1, 3, 5, 5}, rng);
  Tensor x2 = x.clone();
  for (int i = 0; i < 25; ++i)
    x2.data()[static_cast<size_t>(25 + i)] = 0.0;  // zero channel 1
  Tensor a = m.depthwise.forward(x);
  Tensor b = m.depthwise.forward(x2);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 25; ++i) {
      const size_t idx = static_cast<size_t>(c * 25 + i);
      if (c == 1)
        CHECK(b.data()[idx] == 0.0);
      else
        CHECK(b.data()[idx] == a.data()[idx]);
    }
}

TEST_CASE("DSConvModule and residual block preserve spatial dims") {
  SplitMix64 rng(5);
  auto m = DSConvModule::make(4, 6, 1, Activation::relu, rng);
  auto b = DilatedResidualBlock::make(8, 4, Activation::relu, rng);
  for (int h : {1, 2, 5, 9}) {
    for (int w : {1, 3, 7}) {
      Tensor x({1, 4, h, w});
      Tensor y = m.forward(x, false);
      CHECK(y.dim(2) == h);
      CHECK(y.dim(3) == w);
      Tensor xr({1, 8, h, w});
      Tensor yr = b.forward(xr, false);
      CHECK(yr.dim(2) == h);
      CHECK(yr.dim(3) == w);
    }
  }
  CHECK_THROWS_AS(m.forward(Tensor({1, 5, 4, 4}), false),
                  std::invalid_argument);
  CHECK_THROWS_AS(b.forward(Tensor({1, 4, 4, 4}), false),
                  std::invalid_argument);
}

TEST_CASE("residual block with zeroed branch is the identity") {
  SplitMix64 rng(6);
  auto b = DilatedResidualBlock::make(8, 2, Activation::mish, rng);
  fill_constant(b.reduce.weight, 0.0);
  fill_constant(b.dilated.weight, 0.0);
  fill_constant(b.restore.weight, 0.0);
  Tensor x = Tensor::randn({2, 8, 4, 4}, rng);
  Tensor y = b.forward(x, false);
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(std::fabs(y.data()[i] - x.data()[i]) < 1e-12);
}

TEST_CASE("dilated 3x3 stage with dilation 2 spans 5x5") {
  SplitMix64 rng(7);
  auto b = DilatedResidualBlock::make(8, 2, Activation::mish, rng);
  fill_constant(b.dilated.weight, 0.05);
  Tensor x = impulse(2, 11);
  Tensor y = b.dilated.forward(x);
  CHECK(support_width(y) == 5);
}

TEST_CASE("stacked dilations (2,4,6,8) grow the receptive field monotonically") {
  SplitMix64 rng(8);
  std::vector<DilatedResidualBlock> blocks;
  for (int d : {2, 4, 6, 8}) {
    auto b = DilatedResidualBlock::make(8, d, Activation::mish, rng);
    fill_constant(b.reduce.weight, 0.05);
    fill_constant(b.dilated.weight, 0.05);
    fill_constant(b.restore.weight, 0.05);
    blocks.push_back(std::move(b));
  }
  const int hw = 48;
  Tensor x = impulse(8, hw);
  int max_single = 0;
  for (auto& b : blocks) {
    Tensor y = b.forward(x, false);
    // Support of the branch alone (subtract the skip path).
    Tensor branch = sub(y, x);
    max_single = std::max(max_single, support_width(branch));
  }
  CHECK(max_single == 2 * 8 + 1);

  Tensor h = x;
  int prev = support_width(h);
  for (auto& b : blocks) {
    h = b.forward(h, false);
    const int cur = support_width(h);
    CHECK(cur > prev);
    prev = cur;
  }
  CHECK(prev > max_single);
  CHECK(prev == 2 * (2 + 4 + 6 + 8) + 1);
}

TEST_CASE("projector outputs the encoder width") {
  SplitMix64 rng(9);
  auto p = Projector::make(24, 16, rng);
  Tensor x = Tensor::randn({1, 24, 5, 5}, rng);
  Tensor y = p.forward(x, false);
  CHECK(y.dim(1) == 16);
  CHECK(y.dim(2) == 5);
  CHECK(p.param_count() ==
        24 * 16 + 16 * 16 * 9 + 2 * 16 + 2 * 16);
}

TEST_CASE("parameter formulas for standard vs depthwise separable convs") {
  CHECK(standard_conv_params(512, 512, 3) == 2359296);
  CHECK(ds_conv_params(512, 512, 3) == 266752);
  const double ratio = static_cast<double>(standard_conv_params(512, 512, 3)) /
                       static_cast<double>(ds_conv_params(512, 512, 3));
  CHECK(ratio == doctest::Approx(8.844).epsilon(0.001 / 8.844));

  SplitMix64 rng(10);
  auto c = Conv2d::make(512, 128, 1, 1, 0, 1, 1, true, rng);
  CHECK(c.param_count() == 512 * 128 + 128);
}

TEST_CASE("standard/ds ratio equals 9M/(9+M) and its consequences") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(512));
    const int m = 1 + static_cast<int>(rng.uniform_int(512));
    const int64_t std_p = standard_conv_params(n, m, 3);
    const int64_t ds_p = ds_conv_params(n, m, 3);
    // standard/ds == 9M/(9+M), checked as exact integers.
    CHECK(std_p * (9 + m) == static_cast<int64_t>(9) * m * ds_p);
  }
  CHECK(standard_conv_params(100, 72, 3) * 1.0 /
            ds_conv_params(100, 72, 3) ==
        doctest::Approx(8.0).epsilon(1e-12));
  for (int m : {73, 100, 256, 512, 4096}) {
    const double r = static_cast<double>(standard_conv_params(64, m, 3)) /
                     static_cast<double>(ds_conv_params(64, m, 3));
    CHECK(r > 8.0);
    CHECK(r < 9.0);
  }
}

TEST_CASE("MAC accounting uses output spatial dims") {
  SplitMix64 rng(12);
  auto c = Conv2d::make(8, 16, 3, 2, 1, 1, 1, false, rng);
  // 10x10 input, stride 2 -> 5x5 output.
  CHECK(c.macs(10, 10) == 5 * 5 * 16 * 8 * 3 * 3);
  auto m = DSConvModule::make(8, 16, 1, Activation::mish, rng);
  CHECK(m.macs(4, 4) == 4 * 4 * 8 * 9 + 4 * 4 * 8 * 16);
}
