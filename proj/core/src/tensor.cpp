// SPDX-License-Identifier: Apache-2.0
#include "moediff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

#ifndef NDEBUG
void debug_assert_finite(const detail::TensorRecord& rec, const char* op) {
  for (double v : rec.data) {
    if (!std::isfinite(v)) {
      throw ContractError(std::string(op) + ": non-finite value produced");
    }
  }
}
#else
void debug_assert_finite(const detail::TensorRecord&, const char*) {}
#endif

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  }
}

using RecPtr = std::shared_ptr<detail::TensorRecord>;

bool grads_wanted(std::initializer_list<RecPtr> ins) {
  if (!Tape::active().enabled()) return false;
  for (const auto& r : ins) {
    if (r->requires_grad) return true;
  }
  return false;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
  rec_ = std::make_shared<detail::TensorRecord>();
  std::size_t n = shape_product(shape);
  rec_->shape = std::move(shape);
  rec_->data.assign(n, fill);
  if (requires_grad) set_requires_grad(true);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_product(shape) != data.size()) {
    throw DimensionError("from_data: " + std::to_string(data.size()) +
                         " values do not fill the requested shape");
  }
  Tensor t;
  t.rec_ = std::make_shared<detail::TensorRecord>();
  t.rec_->shape = std::move(shape);
  t.rec_->data = std::move(data);
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
  if (!rec_) throw ContractError("use of default-constructed tensor");
  return rec_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size())) {
    throw DimensionError("dim index " + std::to_string(i) + " out of range for " +
                         shape_str());
  }
  return s[static_cast<std::size_t>(i)];
}

std::size_t Tensor::size() const {
  if (!rec_) throw ContractError("use of default-constructed tensor");
  return rec_->data.size();
}

std::vector<double>& Tensor::data() {
  if (!rec_) throw ContractError("use of default-constructed tensor");
  return rec_->data;
}

const std::vector<double>& Tensor::data() const {
  if (!rec_) throw ContractError("use of default-constructed tensor");
  return rec_->data;
}

double Tensor::value() const {
  if (size() != 1) throw ContractError("value() requires a one-element tensor");
  return rec_->data[0];
}

double& Tensor::at(int i) {
  if (rank() != 1) throw DimensionError("at(i) on tensor of shape " + shape_str());
  return rec_->data[static_cast<std::size_t>(i)];
}

double& Tensor::at(int i, int j) {
  if (rank() != 2) throw DimensionError("at(i,j) on tensor of shape " + shape_str());
  return rec_->data[static_cast<std::size_t>(i) * rec_->shape[1] + j];
}

double& Tensor::at(int i, int j, int k) {
  if (rank() != 3) throw DimensionError("at(i,j,k) on tensor of shape " + shape_str());
  const auto& s = rec_->shape;
  return rec_->data[(static_cast<std::size_t>(i) * s[1] + j) * s[2] + k];
}

double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }
double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }
double Tensor::at(int i, int j, int k) const {
  return const_cast<Tensor*>(this)->at(i, j, k);
}

bool Tensor::requires_grad() const { return rec_ && rec_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!rec_) throw ContractError("use of default-constructed tensor");
  rec_->requires_grad = on;
  if (on) {
    rec_->grad.assign(rec_->data.size(), 0.0);
  } else {
    rec_->grad.clear();
  }
  return *this;
}

std::vector<double>& Tensor::grad() {
  if (!requires_grad()) throw ContractError("grad() on tensor without gradient");
  return rec_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw ContractError("grad() on tensor without gradient");
  return rec_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(rec_->grad.begin(), rec_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  if (!rec_) throw ContractError("use of default-constructed tensor");
  return from_data(rec_->shape, rec_->data, false);
}

std::string Tensor::shape_str() const {
  if (!rec_) return "[undefined]";
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < rec_->shape.size(); ++i) {
    if (i) os << ", ";
    os << rec_->shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tape ------------------------------------------------------------------

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::function<void()> backward_step) {
  nodes_.push_back(std::move(backward_step));
}

void Tape::clear() { nodes_.clear(); }

void Tape::replay_reverse_and_clear() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
}

Tape::NoGradGuard::NoGradGuard() : previous_(Tape::active().enabled()) {
  Tape::active().set_enabled(false);
}

Tape::NoGradGuard::~NoGradGuard() { Tape::active().set_enabled(previous_); }

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " x " +
                         b.shape_str());
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  {
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const double aip = av[static_cast<std::size_t>(i) * k + p];
        if (aip == 0.0) continue;
        const std::size_t brow = static_cast<std::size_t>(p) * n;
        const std::size_t orow = static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) ov[orow + j] += aip * bv[brow + j];
      }
    }
  }
  debug_assert_finite(*out.record(), "matmul");

  auto ar = a.record(), br = b.record();
  if (grads_wanted({ar, br})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([ar, br, outr, m, k, n]() {
      const auto& g = outr->grad;
      if (ar->requires_grad) {
        auto& ga = ar->grad;
        const auto& bv = br->data;
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
              acc += g[static_cast<std::size_t>(i) * n + j] *
                     bv[static_cast<std::size_t>(p) * n + j];
            ga[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (br->requires_grad) {
        auto& gb = br->grad;
        const auto& av = ar->data;
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += av[static_cast<std::size_t>(i) * k + p] *
                     g[static_cast<std::size_t>(i) * n + j];
            gb[static_cast<std::size_t>(p) * n + j] += acc;
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: need rank 2, got " + a.shape_str());
  const int m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  {
    const auto& av = a.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ov[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
  }
  auto ar = a.record();
  if (grads_wanted({ar})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([ar, outr, m, n]() {
      auto& ga = ar->grad;
      const auto& g = outr->grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                          BwdA da, BwdB db) {
  require_same_shape(a, b, name);
  Tensor out(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  debug_assert_finite(*out.record(), name);

  auto ar = a.record(), br = b.record();
  if (grads_wanted({ar, br})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([ar, br, outr, da, db]() {
      const auto& g = outr->grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ar->requires_grad) ar->grad[i] += da(ar->data[i], br->data[i]) * g[i];
        if (br->requires_grad) br->grad[i] += db(ar->data[i], br->data[i]) * g[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, const char* name, Fwd fwd, Bwd dfd) {
  Tensor out(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  debug_assert_finite(*out.record(), name);

  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr, dfd]() {
      const auto& g = outr->grad;
      for (std::size_t i = 0; i < g.size(); ++i) xr->grad[i] += dfd(xr->data[i]) * g[i];
    });
  }
  return out;
}

}  // namespace

Tensor affine(const Tensor& x, double k, double c) {
  return unary_elementwise(
      x, "affine", [k, c](double v) { return k * v + c; }, [k](double) { return k; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr]() {
      const double g = outr->grad[0];
      for (auto& gi : xr->grad) gi += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.size()), 0.0);
}

Tensor gelu(const Tensor& x) {
  constexpr double kRoot2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  return unary_elementwise(
      x, "gelu",
      [](double v) {
        const double u = kRoot2OverPi * (v + kCubic * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
      },
      [](double v) {
        const double u = kRoot2OverPi * (v + kCubic * v * v * v);
        const double t = std::tanh(u);
        const double du = kRoot2OverPi * (1.0 + 3.0 * kCubic * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, "sigmoid",
      [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 - s);
      });
}

Tensor log_clamped(const Tensor& x, double floor) {
  if (floor <= 0.0) throw ContractError("log_clamped: floor must be positive");
  return unary_elementwise(
      x, "log_clamped",
      [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor pow_scalar(const Tensor& x, double p) {
  if (p < 0.0) throw ContractError("pow_scalar: exponent must be non-negative");
  return unary_elementwise(
      x, "pow_scalar",
      [p](double v) {
        if (p == 0.0) return 1.0;
        if (p == 1.0) return v;
        return std::pow(v, p);
      },
      [p](double v) {
        if (p == 0.0) return 0.0;
        if (p == 1.0) return 1.0;
        return p * std::pow(v, p - 1.0);
      });
}

namespace {

Tensor softmax_rows_impl(const Tensor& x, const std::vector<bool>* excluded) {
  if (x.rank() != 2) throw DimensionError("softmax: need rank 2, got " + x.shape_str());
  const int m = x.dim(0), n = x.dim(1);
  if (excluded) {
    if (static_cast<int>(excluded->size()) != n) {
      throw DimensionError("masked softmax: mask length does not match columns");
    }
    bool any_admitted = false;
    for (bool e : *excluded) any_admitted |= !e;
    if (!any_admitted) throw ContractError("masked softmax: every column is excluded");
  }
  auto admitted = [excluded](int j) { return !excluded || !(*excluded)[static_cast<std::size_t>(j)]; };

  Tensor out({m, n});
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int i = 0; i < m; ++i) {
    const std::size_t row = static_cast<std::size_t>(i) * n;
    double mx = -1e300;
    for (int j = 0; j < n; ++j)
      if (admitted(j)) mx = std::max(mx, xv[row + j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      ov[row + j] = admitted(j) ? std::exp(xv[row + j] - mx) : 0.0;
      z += ov[row + j];
    }
    for (int j = 0; j < n; ++j) ov[row + j] /= z;
  }
  debug_assert_finite(*out.record(), "softmax");

  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr, m, n]() {
      const auto& y = outr->data;
      const auto& g = outr->grad;
      auto& gx = xr->grad;
      for (int i = 0; i < m; ++i) {
        const std::size_t row = static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[row + j] * y[row + j];
        for (int j = 0; j < n; ++j) gx[row + j] += y[row + j] * (g[row + j] - dot);
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_rows_impl(x, nullptr); }

Tensor masked_softmax_rows(const Tensor& x, const std::vector<bool>& excluded_cols) {
  return softmax_rows_impl(x, &excluded_cols);
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, int padding) {
  if (x.rank() != 3 || kernels.rank() != 4) {
    throw DimensionError("conv2d: need input [c,h,w] and kernels [o,c,k,k]");
  }
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = kernels.dim(0), kc = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kc != ci || kh != kw || kh % 2 == 0) {
    throw DimensionError("conv2d: kernels " + kernels.shape_str() +
                         " do not match input " + x.shape_str() + " (square odd kernels)");
  }
  if (padding < 0) throw ContractError("conv2d: negative padding");
  const int oh = h + 2 * padding - kh + 1;
  const int ow = w + 2 * padding - kw + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: kernel larger than padded input");

  Tensor out({co, oh, ow});
  {
    const auto& xv = x.data();
    const auto& kv = kernels.data();
    auto& ov = out.data();
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy + ky - padding;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox + kx - padding;
                if (ix < 0 || ix >= w) continue;
                acc += xv[(static_cast<std::size_t>(ic) * h + iy) * w + ix] *
                       kv[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
              }
            }
          ov[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
        }
  }
  debug_assert_finite(*out.record(), "conv2d");

  auto xr = x.record(), kr = kernels.record();
  if (grads_wanted({xr, kr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, kr, outr, ci, h, w, co, kh, kw, oh, ow, padding]() {
      const auto& g = outr->grad;
      const auto& xv = xr->data;
      const auto& kv = kr->data;
      for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const double go = g[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
            if (go == 0.0) continue;
            for (int ic = 0; ic < ci; ++ic)
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy + ky - padding;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox + kx - padding;
                  if (ix < 0 || ix >= w) continue;
                  const std::size_t xi = (static_cast<std::size_t>(ic) * h + iy) * w + ix;
                  const std::size_t ki =
                      ((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx;
                  if (xr->requires_grad) xr->grad[xi] += go * kv[ki];
                  if (kr->requires_grad) kr->grad[ki] += go * xv[xi];
                }
              }
          }
    });
  }
  return out;
}

Tensor add_channelwise(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 3 || bias.rank() != 1 || bias.dim(0) != x.dim(0)) {
    throw DimensionError("add_channelwise: bias " + bias.shape_str() +
                         " does not match channels of " + x.shape_str());
  }
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  {
    const auto& xv = x.data();
    const auto& bv = bias.data();
    auto& ov = out.data();
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i)
        ov[static_cast<std::size_t>(ch) * plane + i] =
            xv[static_cast<std::size_t>(ch) * plane + i] + bv[static_cast<std::size_t>(ch)];
  }
  auto xr = x.record(), br = bias.record();
  if (grads_wanted({xr, br})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, br, outr, c, plane]() {
      const auto& g = outr->grad;
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double gi = g[static_cast<std::size_t>(ch) * plane + i];
          if (xr->requires_grad) xr->grad[static_cast<std::size_t>(ch) * plane + i] += gi;
          acc += gi;
        }
        if (br->requires_grad) br->grad[static_cast<std::size_t>(ch)] += acc;
      }
    });
  }
  return out;
}

Tensor take_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("take_rows: need rank-2 table");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ContractError("take_rows: id " + std::to_string(id) + " outside table of " +
                          std::to_string(v) + " rows");
    }
  }
  const int m = static_cast<int>(ids.size());
  Tensor out({m, d});
  {
    const auto& tv = table.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i)
      std::copy_n(tv.begin() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                  d, ov.begin() + static_cast<std::size_t>(i) * d);
  }
  auto tr = table.record();
  if (grads_wanted({tr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([tr, outr, ids, d, m]() {
      const auto& g = outr->grad;
      for (int i = 0; i < m; ++i) {
        const std::size_t dst = static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
        const std::size_t src = static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) tr->grad[dst + j] += g[src + j];
      }
    });
  }
  return out;
}

Tensor take_column(const Tensor& x, int col) {
  if (x.rank() != 2) throw DimensionError("take_column: need rank 2, got " + x.shape_str());
  const int m = x.dim(0), n = x.dim(1);
  if (col < 0 || col >= n) throw DimensionError("take_column: column out of range");
  Tensor out({m});
  {
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i) ov[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>(i) * n + col];
  }
  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr, m, n, col]() {
      for (int i = 0; i < m; ++i)
        xr->grad[static_cast<std::size_t>(i) * n + col] += outr->grad[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& weights) {
  if (x.rank() != 2 || static_cast<int>(weights.size()) != x.dim(0)) {
    throw DimensionError("scale_rows: need one weight per row of " + x.shape_str());
  }
  const int m = x.dim(0), n = x.dim(1);
  Tensor out({m, n});
  {
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ov[static_cast<std::size_t>(i) * n + j] =
            weights[static_cast<std::size_t>(i)] * xv[static_cast<std::size_t>(i) * n + j];
  }
  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr, weights, m, n]() {
      const auto& g = outr->grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xr->grad[static_cast<std::size_t>(i) * n + j] +=
              weights[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& row) {
  if (x.rank() != 2 || row.rank() != 1 || row.dim(0) != x.dim(1)) {
    throw DimensionError("add_rowwise: row " + row.shape_str() +
                         " does not broadcast over " + x.shape_str());
  }
  const int m = x.dim(0), n = x.dim(1);
  Tensor out({m, n});
  {
    const auto& xv = x.data();
    const auto& rv = row.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ov[static_cast<std::size_t>(i) * n + j] =
            xv[static_cast<std::size_t>(i) * n + j] + rv[static_cast<std::size_t>(j)];
  }
  auto xr = x.record(), rr = row.record();
  if (grads_wanted({xr, rr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, rr, outr, m, n]() {
      const auto& g = outr->grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double gi = g[static_cast<std::size_t>(i) * n + j];
          if (xr->requires_grad) xr->grad[static_cast<std::size_t>(i) * n + j] += gi;
          if (rr->requires_grad) rr->grad[static_cast<std::size_t>(j)] += gi;
        }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (shape_product(new_shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + x.shape_str() + " as requested shape");
  }
  Tensor out = Tensor::from_data(std::move(new_shape), x.data());
  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr]() {
      for (std::size_t i = 0; i < outr->grad.size(); ++i) xr->grad[i] += outr->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  if (x.rank() != 2) throw DimensionError("slice_cols: need rank 2, got " + x.shape_str());
  const int m = x.dim(0), n = x.dim(1);
  if (start < 0 || len <= 0 || start + len > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside " + x.shape_str());
  }
  Tensor out({m, len});
  {
    const auto& xv = x.data();
    auto& ov = out.data();
    for (int i = 0; i < m; ++i)
      std::copy_n(xv.begin() + static_cast<std::size_t>(i) * n + start, len,
                  ov.begin() + static_cast<std::size_t>(i) * len);
  }
  auto xr = x.record();
  if (grads_wanted({xr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([xr, outr, m, n, start, len]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
          xr->grad[static_cast<std::size_t>(i) * n + start + j] +=
              outr->grad[static_cast<std::size_t>(i) * len + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no tensors given");
  const int m = parts.front().dim(0);
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw DimensionError("concat_cols: row counts differ");
    }
    total += p.dim(1);
  }
  Tensor out({m, total});
  std::vector<int> offsets;
  {
    auto& ov = out.data();
    int off = 0;
    for (const auto& p : parts) {
      offsets.push_back(off);
      const int w = p.dim(1);
      const auto& pv = p.data();
      for (int i = 0; i < m; ++i)
        std::copy_n(pv.begin() + static_cast<std::size_t>(i) * w, w,
                    ov.begin() + static_cast<std::size_t>(i) * total + off);
      off += w;
    }
  }
  std::vector<RecPtr> recs;
  bool wanted = false;
  for (const auto& p : parts) {
    recs.push_back(p.record());
    wanted = wanted || grads_wanted({p.record()});
  }
  if (wanted) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([recs, offsets, outr, m, total]() {
      for (std::size_t pi = 0; pi < recs.size(); ++pi) {
        if (!recs[pi]->requires_grad) continue;
        const int w = recs[pi]->shape[1];
        const int off = offsets[pi];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            recs[pi]->grad[static_cast<std::size_t>(i) * w + j] +=
                outr->grad[static_cast<std::size_t>(i) * total + off + j];
      }
    });
  }
  return out;
}

namespace {

// Shared index map for patchify and its inverse: token r = gi*(w/p)+gj holds
// feature q = (ch*p + py)*p + px taken from pixel (ch, gi*p+py, gj*p+px).
struct PatchLayout {
  int c, h, w, p, gh, gw, tokens, features;
  PatchLayout(int c_, int h_, int w_, int p_) : c(c_), h(h_), w(w_), p(p_) {
    if (p <= 0 || h % p != 0 || w % p != 0) {
      throw DimensionError("patch size " + std::to_string(p) +
                           " does not tile a " + std::to_string(h) + "x" +
                           std::to_string(w) + " image");
    }
    gh = h / p;
    gw = w / p;
    tokens = gh * gw;
    features = c * p * p;
  }
  std::size_t pixel_index(int token, int feature) const {
    const int gi = token / gw, gj = token % gw;
    const int ch = feature / (p * p);
    const int py = (feature / p) % p, px = feature % p;
    return (static_cast<std::size_t>(ch) * h + gi * p + py) * w + gj * p + px;
  }
};

}  // namespace

Tensor patchify(const Tensor& image, int patch) {
  if (image.rank() != 3) throw DimensionError("patchify: need [c,h,w], got " + image.shape_str());
  PatchLayout lay(image.dim(0), image.dim(1), image.dim(2), patch);
  Tensor out({lay.tokens, lay.features});
  {
    const auto& iv = image.data();
    auto& ov = out.data();
    for (int t = 0; t < lay.tokens; ++t)
      for (int q = 0; q < lay.features; ++q)
        ov[static_cast<std::size_t>(t) * lay.features + q] = iv[lay.pixel_index(t, q)];
  }
  auto ir = image.record();
  if (grads_wanted({ir})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([ir, outr, lay]() {
      for (int t = 0; t < lay.tokens; ++t)
        for (int q = 0; q < lay.features; ++q)
          ir->grad[lay.pixel_index(t, q)] +=
              outr->grad[static_cast<std::size_t>(t) * lay.features + q];
    });
  }
  return out;
}

Tensor unpatchify(const Tensor& tokens, int channels, int height, int width, int patch) {
  PatchLayout lay(channels, height, width, patch);
  if (tokens.rank() != 2 || tokens.dim(0) != lay.tokens || tokens.dim(1) != lay.features) {
    throw DimensionError("unpatchify: tokens " + tokens.shape_str() +
                         " do not reassemble the requested image");
  }
  Tensor out({channels, height, width});
  {
    const auto& tv = tokens.data();
    auto& ov = out.data();
    for (int t = 0; t < lay.tokens; ++t)
      for (int q = 0; q < lay.features; ++q)
        ov[lay.pixel_index(t, q)] = tv[static_cast<std::size_t>(t) * lay.features + q];
  }
  auto tr = tokens.record();
  if (grads_wanted({tr})) {
    out.set_requires_grad(true);
    auto outr = out.record();
    Tape::active().record([tr, outr, lay]() {
      for (int t = 0; t < lay.tokens; ++t)
        for (int q = 0; q < lay.features; ++q)
          tr->grad[static_cast<std::size_t>(t) * lay.features + q] +=
              outr->grad[lay.pixel_index(t, q)];
    });
  }
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a one-element tensor");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not require grad (nothing recorded)");
  }
  loss.record()->grad[0] = 1.0;
  Tape::active().replay_reverse_and_clear();
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step) {
  Tape::active().clear();
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tensor loss = f(probe);
  backward(loss);
  const std::vector<double> analytic = probe.grad();

  std::vector<double> fd(x.size());
  {
    Tape::NoGradGuard guard;
    Tensor work = x.clone();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = work.data()[i];
      work.data()[i] = keep + step;
      const double up = f(work).value();
      work.data()[i] = keep - step;
      const double down = f(work).value();
      work.data()[i] = keep;
      fd[i] = (up - down) / (2.0 * step);
    }
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double denom = std::max({std::fabs(fd[i]), std::fabs(analytic[i]), 1e-8});
    worst = std::max(worst, std::fabs(fd[i] - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace moediff
