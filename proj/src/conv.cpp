#include <cmath>
#include <stdexcept>
#include <string>

#include "bcdet/tensor.hpp"

namespace bcdet {

namespace {

int64_t ceil_div(int64_t a, int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

struct ConvGeom {
  int64_t N, Cin, H, W, Cout, Kh, Kw, Ho, Wo;
  int64_t cg_in, cg_out;  // channels per group
  int s, p, d, g;
};

ConvGeom validate(const Tensor& input, const Tensor& weight,
                  const Tensor& bias, int stride, int padding, int dilation,
                  int groups) {
  if (input.ndim() != 4)
    throw std::invalid_argument("conv2d: input must be 4-D [N,C,H,W], got " +
                                shape_str(input.shape()));
  if (weight.ndim() != 4)
    throw std::invalid_argument(
        "conv2d: weight must be 4-D [Cout,Cin/groups,Kh,Kw], got " +
        shape_str(weight.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (dilation < 1)
    throw std::invalid_argument("conv2d: dilation must be >= 1");
  if (groups < 1) throw std::invalid_argument("conv2d: groups must be >= 1");

  ConvGeom geo;
  geo.N = input.dim(0);
  geo.Cin = input.dim(1);
  geo.H = input.dim(2);
  geo.W = input.dim(3);
  geo.Cout = weight.dim(0);
  geo.Kh = weight.dim(2);
  geo.Kw = weight.dim(3);
  geo.s = stride;
  geo.p = padding;
  geo.d = dilation;
  geo.g = groups;

  if (geo.Cin % groups != 0)
    throw std::invalid_argument("conv2d: input channels " +
                                std::to_string(geo.Cin) +
                                " not divisible by groups " +
                                std::to_string(groups));
  if (geo.Cout % groups != 0)
    throw std::invalid_argument("conv2d: output channels " +
                                std::to_string(geo.Cout) +
                                " not divisible by groups " +
                                std::to_string(groups));
  geo.cg_in = geo.Cin / groups;
  geo.cg_out = geo.Cout / groups;
  if (weight.dim(1) != geo.cg_in)
    throw std::invalid_argument(
        "conv2d: weight channel dim " + std::to_string(weight.dim(1)) +
        " does not match input channels/groups = " + std::to_string(geo.cg_in));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != geo.Cout))
    throw std::invalid_argument("conv2d: bias must be [Cout=" +
                                std::to_string(geo.Cout) + "], got " +
                                shape_str(bias.shape()));

  geo.Ho = (geo.H + 2 * geo.p - geo.d * (geo.Kh - 1) - 1) / geo.s + 1;
  geo.Wo = (geo.W + 2 * geo.p - geo.d * (geo.Kw - 1) - 1) / geo.s + 1;
  if (geo.Ho < 1 || geo.Wo < 1)
    throw std::invalid_argument(
        "conv2d: kernel does not fit input " + shape_str(input.shape()) +
        " with padding " + std::to_string(padding));
  return geo;
}

// Valid output-row range for one kernel tap: indices o with
// 0 <= o*s - p + k*d < limit.
inline void tap_range(int64_t limit, int64_t out_limit, int64_t k, int s,
                      int p, int d, int64_t& lo, int64_t& hi) {
  lo = std::max<int64_t>(0, ceil_div(p - k * d, s));
  hi = std::min<int64_t>(out_limit, (limit - 1 - k * d + p) / s + 1);
}

void conv_forward(const ConvGeom& g, const double* in, const double* w,
                  const double* b, double* out) {
  const bool pointwise =
      g.Kh == 1 && g.Kw == 1 && g.s == 1 && g.p == 0;
  const int64_t hw = g.H * g.W;
  const int64_t ohw = g.Ho * g.Wo;
  for (int64_t n = 0; n < g.N; ++n) {
    for (int64_t co = 0; co < g.Cout; ++co) {
      const int64_t grp = co / g.cg_out;
      double* op = out + (n * g.Cout + co) * ohw;
      const double bias_v = b ? b[co] : 0.0;
      for (int64_t i = 0; i < ohw; ++i) op[i] = bias_v;
      const double* wp = w + co * g.cg_in * g.Kh * g.Kw;
      const double* ip_base = in + (n * g.Cin + grp * g.cg_in) * hw;
      if (pointwise) {
        for (int64_t ci = 0; ci < g.cg_in; ++ci) {
          const double wv = wp[ci];
          const double* ip = ip_base + ci * hw;
          for (int64_t i = 0; i < hw; ++i) op[i] += wv * ip[i];
        }
        continue;
      }
      for (int64_t ci = 0; ci < g.cg_in; ++ci) {
        const double* ip = ip_base + ci * hw;
        for (int64_t kh = 0; kh < g.Kh; ++kh) {
          int64_t oh_lo, oh_hi;
          tap_range(g.H, g.Ho, kh, g.s, g.p, g.d, oh_lo, oh_hi);
          for (int64_t kw = 0; kw < g.Kw; ++kw) {
            const double wv = wp[(ci * g.Kh + kh) * g.Kw + kw];
            int64_t ow_lo, ow_hi;
            tap_range(g.W, g.Wo, kw, g.s, g.p, g.d, ow_lo, ow_hi);
            const int64_t ib = kw * g.d - g.p;
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const int64_t ih = oh * g.s - g.p + kh * g.d;
              const double* irow = ip + ih * g.W;
              double* orow = op + oh * g.Wo;
              if (g.s == 1) {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                  orow[ow] += wv * irow[ow + ib];
              } else {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                  orow[ow] += wv * irow[ow * g.s + ib];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_input(const ConvGeom& g, const double* w,
                         const double* gout, double* gin) {
  const int64_t hw = g.H * g.W;
  const int64_t ohw = g.Ho * g.Wo;
  const bool pointwise = g.Kh == 1 && g.Kw == 1 && g.s == 1 && g.p == 0;
  for (int64_t n = 0; n < g.N; ++n) {
    for (int64_t ci = 0; ci < g.Cin; ++ci) {
      const int64_t grp = ci / g.cg_in;
      const int64_t ci_l = ci % g.cg_in;
      double* gp = gin + (n * g.Cin + ci) * hw;
      for (int64_t co_l = 0; co_l < g.cg_out; ++co_l) {
        const int64_t co = grp * g.cg_out + co_l;
        const double* gop = gout + (n * g.Cout + co) * ohw;
        const double* wp =
            w + (co * g.cg_in + ci_l) * g.Kh * g.Kw;
        if (pointwise) {
          const double wv = wp[0];
          for (int64_t i = 0; i < hw; ++i) gp[i] += wv * gop[i];
          continue;
        }
        for (int64_t kh = 0; kh < g.Kh; ++kh) {
          int64_t oh_lo, oh_hi;
          tap_range(g.H, g.Ho, kh, g.s, g.p, g.d, oh_lo, oh_hi);
          for (int64_t kw = 0; kw < g.Kw; ++kw) {
            const double wv = wp[kh * g.Kw + kw];
            int64_t ow_lo, ow_hi;
            tap_range(g.W, g.Wo, kw, g.s, g.p, g.d, ow_lo, ow_hi);
            const int64_t ib = kw * g.d - g.p;
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const int64_t ih = oh * g.s - g.p + kh * g.d;
              double* grow = gp + ih * g.W;
              const double* gorow = gop + oh * g.Wo;
              if (g.s == 1) {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                  grow[ow + ib] += wv * gorow[ow];
              } else {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                  grow[ow * g.s + ib] += wv * gorow[ow];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_weight(const ConvGeom& g, const double* in,
                          const double* gout, double* gw) {
  const int64_t hw = g.H * g.W;
  const int64_t ohw = g.Ho * g.Wo;
  const bool pointwise = g.Kh == 1 && g.Kw == 1 && g.s == 1 && g.p == 0;
  for (int64_t co = 0; co < g.Cout; ++co) {
    const int64_t grp = co / g.cg_out;
    for (int64_t ci_l = 0; ci_l < g.cg_in; ++ci_l) {
      const int64_t ci = grp * g.cg_in + ci_l;
      if (pointwise) {
        double acc = 0.0;
        for (int64_t n = 0; n < g.N; ++n) {
          const double* gop = gout + (n * g.Cout + co) * ohw;
          const double* ip = in + (n * g.Cin + ci) * hw;
          for (int64_t i = 0; i < hw; ++i) acc += gop[i] * ip[i];
        }
        gw[co * g.cg_in + ci_l] += acc;
        continue;
      }
      for (int64_t kh = 0; kh < g.Kh; ++kh) {
        int64_t oh_lo, oh_hi;
        tap_range(g.H, g.Ho, kh, g.s, g.p, g.d, oh_lo, oh_hi);
        for (int64_t kw = 0; kw < g.Kw; ++kw) {
          int64_t ow_lo, ow_hi;
          tap_range(g.W, g.Wo, kw, g.s, g.p, g.d, ow_lo, ow_hi);
          const int64_t ib = kw * g.d - g.p;
          double acc = 0.0;
          for (int64_t n = 0; n < g.N; ++n) {
            const double* gop = gout + (n * g.Cout + co) * ohw;
            const double* ip = in + (n * g.Cin + ci) * hw;
            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
              const int64_t ih = oh * g.s - g.p + kh * g.d;
              const double* irow = ip + ih * g.W;
              const double* gorow = gop + oh * g.Wo;
              if (g.s == 1) {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                  acc += gorow[ow] * irow[ow + ib];
              } else {
                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                  acc += gorow[ow] * irow[ow * g.s + ib];
              }
            }
          }
          gw[(co * g.cg_in + ci_l) * g.Kh * g.Kw + kh * g.Kw + kw] += acc;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int dilation, int groups) {
  const ConvGeom geo =
      validate(input, weight, bias, stride, padding, dilation, groups);

  const bool needs_grad = input.requires_grad() || weight.requires_grad() ||
                          (bias.defined() && bias.requires_grad());
  Tensor out({geo.N, geo.Cout, geo.Ho, geo.Wo},
             needs_grad && Tape::active() != nullptr);
  conv_forward(geo, input.data().data(), weight.data().data(),
               bias.defined() ? bias.data().data() : nullptr,
               out.data().data());

  if (Tape* tape = Tape::active(); tape && needs_grad) {
    auto ii = input.impl();
    auto wi = weight.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    auto oi = out.impl();
    const bool need_in = input.requires_grad();
    const bool need_w = weight.requires_grad();
    const bool need_b = bi && bias.requires_grad();
    tape->record([geo, ii, wi, bi, oi, need_in, need_w, need_b]() {
      if (oi->grad.empty()) return;
      const double* gout = oi->grad.data();
      if (need_b) {
        if (bi->grad.empty()) bi->grad.assign(bi->data.size(), 0.0);
        const int64_t ohw = geo.Ho * geo.Wo;
        for (int64_t n = 0; n < geo.N; ++n)
          for (int64_t co = 0; co < geo.Cout; ++co) {
            const double* gop = gout + (n * geo.Cout + co) * ohw;
            double acc = 0.0;
            for (int64_t i = 0; i < ohw; ++i) acc += gop[i];
            bi->grad[static_cast<size_t>(co)] += acc;
          }
      }
      if (need_w) {
        if (wi->grad.empty()) wi->grad.assign(wi->data.size(), 0.0);
        conv_backward_weight(geo, ii->data.data(), gout, wi->grad.data());
      }
      if (need_in) {
        if (ii->grad.empty()) ii->grad.assign(ii->data.size(), 0.0);
        conv_backward_input(geo, wi->data.data(), gout, ii->grad.data());
      }
    });
  }
  return out;
}

}  // namespace bcdet
