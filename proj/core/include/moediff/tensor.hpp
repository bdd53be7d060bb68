// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace moediff {

namespace detail {
struct TensorRecord {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data iff requires_grad
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape keep cheap references to producers and consumers. All
/// arithmetic is double precision throughout; at this scale gradient checks
/// matter more than speed.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return rec_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  int dim(int i) const;
  std::size_t size() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double value() const;  // scalar tensors only

  double& at(int i);
  double& at(int i, int j);
  double& at(int i, int j, int k);
  double at(int i) const;
  double at(int i, int j) const;
  double at(int i, int j, int k) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Deep copy with fresh storage (gradient buffer not copied).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return rec_ == other.rec_; }
  std::string shape_str() const;

  std::shared_ptr<detail::TensorRecord> record() const { return rec_; }

 private:
  std::shared_ptr<detail::TensorRecord> rec_;
};

/// Ordered record of executed ops. backward() replays it once, in reverse,
/// and then clears it; each node is a closure that scatters the output
/// gradient back onto its inputs.
class Tape {
 public:
  static Tape& active();  // thread-local

  void record(std::function<void()> backward_step);
  void clear();
  std::size_t size() const { return nodes_.size(); }

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  /// RAII guard that pauses recording, for inference and finite differences.
  class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
  };

  void replay_reverse_and_clear();

 private:
  std::vector<std::function<void()>> nodes_;
  bool enabled_ = true;
};

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard

/// Elementwise k*x + c.
Tensor affine(const Tensor& x, double k, double c);
inline Tensor scale(const Tensor& x, double k) { return affine(x, k, 0.0); }

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Tanh-approximation GELU:
///   gelu(x) = 0.5 * x * (1 + tanh(0.7978845608028654 * (x + 0.044715 x^3)))
/// The constant is sqrt(2/pi) to 16 digits so independent implementations
/// agree to 1e-12.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(max(x, floor)); zero derivative inside the clamp.
Tensor log_clamped(const Tensor& x, double floor = 1e-12);
/// x^p for fixed p >= 0 (p == 0 and p == 1 handled exactly).
Tensor pow_scalar(const Tensor& x, double p);

/// Row-stable softmax over the last dimension of a 2-D tensor. Each row sums
/// to 1 within 1e-12; the row max is subtracted before exponentiation.
Tensor softmax_rows(const Tensor& x);
/// Softmax with excluded columns (they get -inf logits and exactly-zero
/// output). Every row must keep at least one admitted column.
Tensor masked_softmax_rows(const Tensor& x, const std::vector<bool>& excluded_cols);

/// Cross-correlation of x [c_in,h,w] with kernels [c_out,c_in,k,k], zero
/// padding, odd k. padding == (k-1)/2 preserves the spatial size.
Tensor conv2d(const Tensor& x, const Tensor& kernels, int padding);
/// Adds bias[c] to every pixel of channel c of a [c,h,w] tensor.
Tensor add_channelwise(const Tensor& x, const Tensor& bias);

/// Embedding-style row gather; duplicate ids accumulate gradient.
Tensor take_rows(const Tensor& table, const std::vector<int>& ids);
Tensor take_column(const Tensor& x, int col);

/// Scales row i of a 2-D tensor by weights[i] (weights are constants).
Tensor scale_rows(const Tensor& x, const std::vector<double>& weights);
/// Broadcasts a length-n vector over the rows of an [m,n] tensor.
Tensor add_rowwise(const Tensor& x, const Tensor& row);

Tensor reshape(const Tensor& x, std::vector<int> new_shape);

/// Columns [start, start+len) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, int start, int len);
/// Horizontal concatenation of 2-D tensors with equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);

/// [c,h,w] -> [(h/p)*(w/p), c*p*p] patch rows, row-major over the patch grid.
Tensor patchify(const Tensor& image, int patch);
Tensor unpatchify(const Tensor& tokens, int channels, int height, int width, int patch);

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse; the tape is
/// consumed. Throws ContractError unless loss is a scalar requiring grad.
void backward(const Tensor& loss);

/// Central-difference gradient check of a scalar-valued function at x.
/// Returns max_i |fd_i - ad_i| / max(|fd_i|, |ad_i|, 1e-8).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

}  // namespace moediff
