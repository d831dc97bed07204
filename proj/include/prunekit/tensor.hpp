#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prunekit/rng.hpp"

namespace prunekit {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
};

// Dense row-major tensor of 64-bit reals. Copies share storage; use clone()
// for a deep copy. Gradients accumulate into `grad` during Tape::backward.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& buffer() { return impl_->data; }
  const std::vector<double>& buffer() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  // Gradient buffer, zero-initialized on first access.
  std::vector<double>& grad();
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  double item() const;  // value of a one-element tensor
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of executed operations for one forward pass. Constructing a
// Tape makes it the active recorder on this thread; ops append their backward
// step while it is active. backward() replays the record in reverse, summing
// into .grad of every tensor on the path. One backward per tape; gradients of
// gradients are not supported.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  void record(std::function<void()> backward_fn);
  size_t size() const { return entries_.size(); }

  static Tape* active();

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// ---- batch-norm state ----

struct BNState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BNState init(int64_t channels) {
    BNState s;
    s.running_mean.assign(static_cast<size_t>(channels), 0.0);
    s.running_var.assign(static_cast<size_t>(channels), 1.0);
    return s;
  }
  int64_t channels() const { return static_cast<int64_t>(running_mean.size()); }
};

enum class BNMode { Train, Eval };

// ---- differentiable ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
// x:[m,in] w:[out,in] b:[out] -> [m,out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x:[N,Cin,H,W] w:[Cout,Cin,Kh,Kw]; cross-correlation, zero padding
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
// x:[N,C,H,W] w:[C,1,Kh,Kw]
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
// 4-d input, per-channel stats over N*H*W; train mode updates `state` with
// momentum, eval mode normalizes with the stored running stats.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BNState& state,
                 BNMode mode, double momentum = 0.1, double eps = 1e-5);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
// Leading sub-block of `t`, one extent per axis; backward scatters into the
// same region of the source gradient and leaves the rest untouched.
Tensor crop(const Tensor& t, const Shape& target);
Tensor crop(const Tensor& w, int64_t co, int64_t ci);  // conv-weight convenience
Tensor reshape(const Tensor& t, const Shape& target);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
// Mean cross-entropy over the batch; labels are class indices.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor sum(const Tensor& t);

std::vector<int> argmax_rows(const Tensor& logits);

// ---- optimizer ----

// v <- momentum*v + grad + weight_decay*param; param -= lr*v. Zeroes grads.
void sgd_step(std::vector<Tensor>& params, std::vector<std::vector<double>>& velocity, double lr,
              double momentum, double weight_decay);

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum, double weight_decay);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace prunekit
