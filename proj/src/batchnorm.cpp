#include <cmath>
#include <stdexcept>
#include <string>

#include "bcdet/tensor.hpp"

namespace bcdet {

Tensor batchnorm2d(const Tensor& input, const Tensor& scale,
                   const Tensor& shift, Tensor& running_mean,
                   Tensor& running_var, bool training, double momentum,
                   double eps) {
  if (input.ndim() != 4)
    throw std::invalid_argument("batchnorm2d: input must be 4-D, got " +
                                shape_str(input.shape()));
  if (eps <= 0.0) throw std::invalid_argument("batchnorm2d: eps must be > 0");
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2),
                W = input.dim(3);
  auto check_c = [&](const Tensor& t, const char* name) {
    if (!t.defined() || t.ndim() != 1 || t.dim(0) != C)
      throw std::invalid_argument(std::string("batchnorm2d: ") + name +
                                  " must be [C=" + std::to_string(C) + "]");
  };
  check_c(scale, "scale");
  check_c(shift, "shift");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");

  const int64_t m = N * H * W;  // elements per channel
  if (training && m < 2)
    throw std::invalid_argument(
        "batchnorm2d: training mode needs at least 2 values per channel, got " +
        std::to_string(m));

  const bool needs_grad =
      input.requires_grad() || scale.requires_grad() || shift.requires_grad();
  Tensor out(input.shape(), needs_grad && Tape::active() != nullptr);

  const double* x = input.data().data();
  const double* sc = scale.data().data();
  const double* sh = shift.data().data();
  double* y = out.data().data();
  const int64_t hw = H * W;

  // Per-channel mean and 1/sqrt(var+eps) used by normalization; saved for
  // the backward pass.
  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(C));

  for (int64_t c = 0; c < C; ++c) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = x + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = x + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const double dlt = p[i] - mu;
          sq += dlt * dlt;
        }
      }
      var = sq / static_cast<double>(m);  // biased, used for normalization
      const double unbiased = sq / static_cast<double>(m - 1);
      auto rm = running_mean.data();
      auto rv = running_var.data();
      rm[static_cast<size_t>(c)] =
          (1.0 - momentum) * rm[static_cast<size_t>(c)] + momentum * mu;
      rv[static_cast<size_t>(c)] =
          (1.0 - momentum) * rv[static_cast<size_t>(c)] + momentum * unbiased;
    } else {
      mu = running_mean.data()[static_cast<size_t>(c)];
      var = running_var.data()[static_cast<size_t>(c)];
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    (*mean)[static_cast<size_t>(c)] = mu;
    (*inv_std)[static_cast<size_t>(c)] = inv;
    const double a = sc[c] * inv;
    const double b = sh[c] - a * mu;
    for (int64_t n = 0; n < N; ++n) {
      const double* p = x + (n * C + c) * hw;
      double* q = y + (n * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = a * p[i] + b;
    }
  }

  if (Tape* tape = Tape::active(); tape && needs_grad) {
    auto xi = input.impl();
    auto sci = scale.impl();
    auto shi = shift.impl();
    auto oi = out.impl();
    const bool need_x = input.requires_grad();
    const bool need_sc = scale.requires_grad();
    const bool need_sh = shift.requires_grad();
    tape->record([=]() {
      if (oi->grad.empty()) return;
      const double* g = oi->grad.data();
      const double* xd = xi->data.data();
      const double dm = static_cast<double>(m);
      if (need_x && xi->grad.empty()) xi->grad.assign(xi->data.size(), 0.0);
      if (need_sc && sci->grad.empty()) sci->grad.assign(sci->data.size(), 0.0);
      if (need_sh && shi->grad.empty()) shi->grad.assign(shi->data.size(), 0.0);
      for (int64_t c = 0; c < C; ++c) {
        const double mu = (*mean)[static_cast<size_t>(c)];
        const double inv = (*inv_std)[static_cast<size_t>(c)];
        const double gamma = sci->data[static_cast<size_t>(c)];
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const double* gp = g + (n * C + c) * hw;
          const double* xp = xd + (n * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_g += gp[i];
            sum_gx += gp[i] * (xp[i] - mu) * inv;
          }
        }
        if (need_sc) sci->grad[static_cast<size_t>(c)] += sum_gx;
        if (need_sh) shi->grad[static_cast<size_t>(c)] += sum_g;
        if (!need_x) continue;
        if (training) {
          // dx = gamma*inv*(g - mean(g) - xhat*mean(g*xhat))
          const double mg = sum_g / dm;
          const double mgx = sum_gx / dm;
          for (int64_t n = 0; n < N; ++n) {
            const double* gp = g + (n * C + c) * hw;
            const double* xp = xd + (n * C + c) * hw;
            double* dx = xi->grad.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              const double xhat = (xp[i] - mu) * inv;
              dx[i] += gamma * inv * (gp[i] - mg - xhat * mgx);
            }
          }
        } else {
          const double a = gamma * inv;
          for (int64_t n = 0; n < N; ++n) {
            const double* gp = g + (n * C + c) * hw;
            double* dx = xi->grad.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dx[i] += a * gp[i];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace bcdet
