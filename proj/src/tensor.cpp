#include "bcdet/tensor.hpp"

#include <cassert>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bcdet {

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i)
    os << shape[i] << (i + 1 < shape.size() ? "," : "");
  os << ']';
  return os.str();
}

namespace {

void check_shape(const std::vector<int64_t>& shape) {
  for (int64_t d : shape)
    if (d <= 0)
      throw std::invalid_argument("tensor shape must be positive, got " +
                                  shape_str(shape));
}

#ifndef NDEBUG
void debug_check_finite(const TensorImpl& t, const char* op) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value after ") + op);
}
#define BCDET_CHECK_FINITE(impl, op) debug_check_finite(*(impl), op)
#else
#define BCDET_CHECK_FINITE(impl, op) ((void)0)
#endif

thread_local Tape* g_active_tape = nullptr;

}  // namespace

// ---- Tensor ----

Tensor::Tensor(std::vector<int64_t> shape, bool requires_grad) {
  check_shape(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values,
                    bool requires_grad) {
  check_shape(shape);
  if (numel_of(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor data length " +
                                std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value,
                    bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int64_t> shape, SplitMix64& rng,
                     double stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.impl_->data) v = stddev * rng.normal();
  return t;
}

double Tensor::item() const {
  if (!impl_ || impl_->data.size() != 1)
    throw std::invalid_argument("item() requires a one-element tensor");
  return impl_->data[0];
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  static const std::vector<double> kEmpty;
  return impl_->grad.empty() ? std::span<const double>(kEmpty)
                             : std::span<const double>(impl_->grad);
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

// ---- Tape ----

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> node) {
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1)
    throw std::invalid_argument("backward root must be scalar, has " +
                                std::to_string(root.numel()) + " elements");
  if (consumed_)
    throw std::logic_error("backward may run once per tape");
  consumed_ = true;
  Tensor r = root;
  r.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

NoTape::NoTape() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoTape::~NoTape() { g_active_tape = saved_; }

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::mish: return "mish";
    case Activation::swish: return "swish";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "mish") return Activation::mish;
  if (name == "swish") return Activation::swish;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

// ---- scalar math ----

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double mish_scalar(double x) { return x * std::tanh(softplus(x)); }

double swish_scalar(double x) { return x * sigmoid_scalar(x); }

// ---- op helpers ----

namespace {

Tensor make_output(std::vector<int64_t> shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad && Tape::active() != nullptr);
}

void accumulate(TensorImpl& t, size_t i, double v) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  t.grad[i] += v;
}

// Elementwise unary op with pointwise derivative df(x, y) where y = f(x).
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, [[maybe_unused]] const char* name, F f,
                DF df) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  auto xs = x.data();
  auto os = out.data();
  for (size_t i = 0; i < xs.size(); ++i) os[i] = f(xs[i]);
  BCDET_CHECK_FINITE(out.impl(), name);
  if (Tape* tape = Tape::active(); tape && x.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape->record([xi, oi, df]() {
      if (oi->grad.empty()) return;
      if (xi->grad.empty()) xi->grad.assign(xi->data.size(), 0.0);
      for (size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += df(xi->data[i], oi->data[i]) * oi->grad[i];
    });
  }
  return out;
}

enum class BinKind { add, sub, mul, divide, minimum, maximum };

double bin_eval(BinKind k, double a, double b) {
  switch (k) {
    case BinKind::add: return a + b;
    case BinKind::sub: return a - b;
    case BinKind::mul: return a * b;
    case BinKind::divide: return a / b;
    case BinKind::minimum: return a <= b ? a : b;
    case BinKind::maximum: return a >= b ? a : b;
  }
  return 0.0;
}

// d(out)/da and d(out)/db at one element. Ties in min/max route to a.
void bin_grads(BinKind k, double a, double b, double& da, double& db) {
  switch (k) {
    case BinKind::add: da = 1.0; db = 1.0; return;
    case BinKind::sub: da = 1.0; db = -1.0; return;
    case BinKind::mul: da = b; db = a; return;
    case BinKind::divide: da = 1.0 / b; db = -a / (b * b); return;
    case BinKind::minimum:
      da = a <= b ? 1.0 : 0.0;
      db = a <= b ? 0.0 : 1.0;
      return;
    case BinKind::maximum:
      da = a >= b ? 1.0 : 0.0;
      db = a >= b ? 0.0 : 1.0;
      return;
  }
}

const char* bin_name(BinKind k) {
  switch (k) {
    case BinKind::add: return "add";
    case BinKind::sub: return "sub";
    case BinKind::mul: return "mul";
    case BinKind::divide: return "divide";
    case BinKind::minimum: return "minimum";
    case BinKind::maximum: return "maximum";
  }
  return "?";
}

Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  // The only broadcast supported: b is a per-channel vector [C] against a
  // 4-D a of shape [N,C,H,W].
  const bool channel_bcast =
      !same && b.ndim() == 1 && a.ndim() == 4 && a.dim(1) == b.dim(0);
  if (!same && !channel_bcast)
    throw std::invalid_argument(std::string(bin_name(kind)) +
                                ": incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));

  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  auto as = a.data();
  auto bs = b.data();
  auto os = out.data();
  const int64_t hw = same ? 0 : a.dim(2) * a.dim(3);
  const int64_t C = same ? 0 : a.dim(1);
  if (same) {
    for (size_t i = 0; i < as.size(); ++i) os[i] = bin_eval(kind, as[i], bs[i]);
  } else {
    for (size_t i = 0; i < as.size(); ++i) {
      const int64_t c = (static_cast<int64_t>(i) / hw) % C;
      os[i] = bin_eval(kind, as[i], bs[static_cast<size_t>(c)]);
    }
  }
  BCDET_CHECK_FINITE(out.impl(), bin_name(kind));

  if (Tape* tape = Tape::active();
      tape && (a.requires_grad() || b.requires_grad())) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    const bool need_a = a.requires_grad();
    const bool need_b = b.requires_grad();
    tape->record([kind, ai, bi, oi, need_a, need_b, same, hw, C]() {
      if (oi->grad.empty()) return;
      for (size_t i = 0; i < oi->data.size(); ++i) {
        const size_t bj =
            same ? i
                 : static_cast<size_t>((static_cast<int64_t>(i) / hw) % C);
        double da = 0.0, db = 0.0;
        bin_grads(kind, ai->data[i], bi->data[bj], da, db);
        const double g = oi->grad[i];
        if (need_a) accumulate(*ai, i, da * g);
        if (need_b) accumulate(*bi, bj, db * g);
      }
    });
  }
  return out;
}

}  // namespace

// ---- activations / unary ----

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor mish(const Tensor& x) {
  return unary_op(
      x, "mish", [](double v) { return mish_scalar(v); },
      [](double v, double) {
        const double t = std::tanh(softplus(v));
        return t + v * (1.0 - t * t) * sigmoid_scalar(v);
      });
}

Tensor swish(const Tensor& x) {
  return unary_op(
      x, "swish", [](double v) { return swish_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor activation(const Tensor& input, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(input);
    case Activation::mish: return mish(input);
    case Activation::swish: return swish(input);
  }
  throw std::invalid_argument("unknown activation kind");
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid", [](double v) { return sigmoid_scalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary_op(
      x, "log_sigmoid", [](double v) { return -softplus(-v); },
      [](double v, double) { return sigmoid_scalar(-v); });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0))
      throw std::domain_error("log of non-positive value " +
                              std::to_string(v));
  return unary_op(
      x, "log", [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  return unary_op(
      x, "pow_scalar",
      [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        if (exponent == 0.0) return 0.0;
        if (v == 0.0) return 0.0;  // exponent >= 1 in every use here
        return exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(
      x, "clamp",
      [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor scalar_mul(const Tensor& x, double s) {
  return unary_op(
      x, "scalar_mul", [s](double v) { return v * s; },
      [s](double, double) { return s; });
}

Tensor scalar_add(const Tensor& x, double s) {
  return unary_op(
      x, "scalar_add", [s](double v) { return v + s; },
      [](double, double) { return 1.0; });
}

// ---- binary ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::add, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::sub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::mul, a, b);
}
Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::divide, a, b);
}
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::minimum, a, b);
}
Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::maximum, a, b);
}

// ---- reductions / indexing ----

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = make_output({1}, x.requires_grad());
  out.data()[0] = total;
  if (Tape* tape = Tape::active(); tape && x.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape->record([xi, oi]() {
      if (oi->grad.empty()) return;
      const double g = oi->grad[0];
      if (xi->grad.empty()) xi->grad.assign(xi->data.size(), 0.0);
      for (double& gv : xi->grad) gv += g;
    });
  }
  return out;
}

Tensor gather(const Tensor& t, std::vector<int64_t> indices,
              std::vector<int64_t> out_shape) {
  if (out_shape.empty())
    out_shape = {static_cast<int64_t>(indices.size())};
  if (numel_of(out_shape) != static_cast<int64_t>(indices.size()))
    throw std::invalid_argument("gather: out_shape does not match index count");
  const int64_t n = t.numel();
  for (int64_t idx : indices)
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("gather: index " + std::to_string(idx) +
                                  " out of range [0," + std::to_string(n) +
                                  ")");
  Tensor out = make_output(std::move(out_shape), t.requires_grad());
  auto ts = t.data();
  auto os = out.data();
  for (size_t i = 0; i < indices.size(); ++i)
    os[i] = ts[static_cast<size_t>(indices[i])];
  if (Tape* tape = Tape::active(); tape && t.requires_grad()) {
    auto ti = t.impl();
    auto oi = out.impl();
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
    tape->record([ti, oi, idx]() {
      if (oi->grad.empty()) return;
      if (ti->grad.empty()) ti->grad.assign(ti->data.size(), 0.0);
      for (size_t i = 0; i < idx->size(); ++i)
        ti->grad[static_cast<size_t>((*idx)[i])] += oi->grad[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& t, std::vector<int64_t> new_shape) {
  if (numel_of(new_shape) != t.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(t.shape()) + " as " +
                                shape_str(new_shape));
  Tensor out = make_output(std::move(new_shape), t.requires_grad());
  auto ts = t.data();
  auto os = out.data();
  for (size_t i = 0; i < ts.size(); ++i) os[i] = ts[i];
  if (Tape* tape = Tape::active(); tape && t.requires_grad()) {
    auto ti = t.impl();
    auto oi = out.impl();
    tape->record([ti, oi]() {
      if (oi->grad.empty()) return;
      if (ti->grad.empty()) ti->grad.assign(ti->data.size(), 0.0);
      for (size_t i = 0; i < ti->data.size(); ++i)
        ti->grad[i] += oi->grad[i];
    });
  }
  return out;
}

bool has_nonfinite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return true;
  return false;
}

// ---- gradient checking ----

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be > 0");

  // Analytic pass.
  Tensor x = point.clone();
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = f(x);
    if (y.numel() != 1)
      throw std::invalid_argument("grad_check: f must return a scalar");
    tape.backward(y);
    auto g = x.grad();
    analytic.assign(g.begin(), g.end());
  }

  // Central differences, no recording.
  NoTape no_tape;
  Tensor probe = point.clone();
  double max_rel = 0.0;
  auto pd = probe.data();
  for (size_t i = 0; i < pd.size(); ++i) {
    const double saved = pd[i];
    pd[i] = saved + step;
    const double fp = f(probe).item();
    pd[i] = saved - step;
    const double fm = f(probe).item();
    pd[i] = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom =
        std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace bcdet
