#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (per-output-element summation, O(n^2) scans) so they
// share no structure with the library code they check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bcdet/detection.hpp"

namespace oracle {

// Direct 7-loop convolution: one accumulator per output element.
inline std::vector<double> conv2d(const std::vector<double>& in, int n_batch,
                                  int cin, int h, int w,
                                  const std::vector<double>& weight, int cout,
                                  int kh, int kw,
                                  const std::vector<double>* bias, int stride,
                                  int pad, int dil, int groups, int& ho,
                                  int& wo) {
  ho = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  wo = (w + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  const int cgi = cin / groups;
  const int cgo = cout / groups;
  std::vector<double> out(static_cast<size_t>(n_batch) * cout * ho * wo, 0.0);
  for (int n = 0; n < n_batch; ++n)
    for (int co = 0; co < cout; ++co)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
          const int grp = co / cgo;
          for (int ci = 0; ci < cgi; ++ci)
            for (int y = 0; y < kh; ++y)
              for (int x = 0; x < kw; ++x) {
                const int ih = oh * stride - pad + y * dil;
                const int iw = ow * stride - pad + x * dil;
                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                acc += in[static_cast<size_t>(
                           ((n * cin + grp * cgi + ci) * h + ih) * w + iw)] *
                       weight[static_cast<size_t>(
                           ((co * cgi + ci) * kh + y) * kw + x)];
              }
          out[static_cast<size_t>(((n * cout + co) * ho + oh) * wo + ow)] =
              acc;
        }
  return out;
}

// Greedy NMS exactly as specified, checking every kept box pairwise.
inline std::vector<bcdet::Detection> nms(
    const std::vector<bcdet::Detection>& dets, double thr) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[static_cast<size_t>(a)].score !=
        dets[static_cast<size_t>(b)].score)
      return dets[static_cast<size_t>(a)].score >
             dets[static_cast<size_t>(b)].score;
    return a < b;
  });
  std::vector<bcdet::Detection> kept;
  for (int i : order) {
    const auto& d = dets[static_cast<size_t>(i)];
    bool drop = false;
    for (const auto& k : kept)
      if (k.class_id == d.class_id && bcdet::iou(k.box, d.box) > thr) {
        drop = true;
        break;
      }
    if (!drop) kept.push_back(d);
  }
  return kept;
}

// Golden-section minimization of a 1-D function on [lo, hi].
template <typename F>
double minimize_1d(F f, double lo, double hi, double& argmin) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  for (int i = 0; i < 200; ++i) {
    if (f(c) < f(d)) b = d; else a = c;
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  argmin = 0.5 * (a + b);
  return f(argmin);
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace oracle
