#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bcdet/rng.hpp"

namespace bcdet {

int64_t numel_of(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

// Dense N-dimensional double tensor, row-major. Value type with shared
// storage; copying a Tensor aliases the same buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, bool requires_grad = false);

  static Tensor from(std::vector<int64_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(std::vector<int64_t> shape, SplitMix64& rng,
                      double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;  // value of a one-element tensor

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<double> grad();        // allocates zeros on first use
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;  // deep copy of data; grad not copied

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Define-by-run gradient tape. Constructing a Tape makes it the active
// recorder for the current thread; destruction restores the previous one.
// Ops record a node when the tape is active and an input requires grad.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(root)/d(root) = 1 and runs all recorded nodes in reverse,
  // accumulating into the grad of every requires_grad leaf. root must have
  // exactly one element; a tape runs backward at most once.
  void backward(const Tensor& root);

  size_t size() const { return nodes_.size(); }
  void record(std::function<void()> node);

  static Tape* active();

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
};

// Temporarily disables recording (used by grad_check's numeric side).
class NoTape {
 public:
  NoTape();
  ~NoTape();

 private:
  Tape* saved_;
};

enum class Activation { relu, mish, swish };
const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// ---- scalar math shared by ops and tests ----
double softplus(double x);       // max(x,0) + log1p(exp(-|x|))
double sigmoid_scalar(double x);
double mish_scalar(double x);
double swish_scalar(double x);

// ---- ops ----
// Output spatial dims: floor((H + 2*padding - dilation*(K-1) - 1)/stride) + 1.
// bias may be an undefined Tensor (no bias).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int dilation, int groups);

// Training mode normalizes with batch statistics (biased variance) and
// updates running stats in place: r = (1-momentum)*r + momentum*batch
// (running variance uses the unbiased estimate). Inference mode applies the
// affine map through the running stats.
Tensor batchnorm2d(const Tensor& input, const Tensor& scale,
                   const Tensor& shift, Tensor& running_mean,
                   Tensor& running_var, bool training, double momentum,
                   double eps);

Tensor activation(const Tensor& input, Activation kind);
Tensor relu(const Tensor&);
Tensor mish(const Tensor&);
Tensor swish(const Tensor&);
Tensor sigmoid(const Tensor&);
Tensor log_sigmoid(const Tensor&);  // overflow-safe log(sigmoid(x))
Tensor exp(const Tensor&);
Tensor log(const Tensor&);  // throws std::domain_error on x <= 0
Tensor pow_scalar(const Tensor&, double exponent);  // x >= 0 expected
Tensor clamp(const Tensor&, double lo, double hi);

// a and b must have equal shapes, or b may be a per-channel vector [C]
// broadcast over a 4-D a of shape [N,C,H,W].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor&, double s);
Tensor scalar_add(const Tensor&, double s);
Tensor sum(const Tensor&);  // reduce all elements to a [1] scalar

// out[i] = t.flat[indices[i]]; backward scatter-accumulates. out_shape
// defaults to {len(indices)}.
Tensor gather(const Tensor& t, std::vector<int64_t> indices,
              std::vector<int64_t> out_shape = {});
Tensor reshape(const Tensor& t, std::vector<int64_t> new_shape);

bool has_nonfinite(const Tensor& t);

// Compares the analytic gradient of f (a scalar-valued tensor function) at
// `point` against central finite differences with the given step. Returns the
// max elementwise relative error with denominator max(1, |analytic|, |numeric|).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double step = 1e-5);

}  // namespace bcdet
