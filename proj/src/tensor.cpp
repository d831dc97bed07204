#include "prunekit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace prunekit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Returns grad buffer if the tensor participates in backward, else nullptr.
double* grad_ptr(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl->requires_grad) return nullptr;
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad.data();
}

// Output grad may never have been touched, in which case nothing flowed
// through this op and its backward step is a no-op.
const double* out_grad_ptr(const std::shared_ptr<TensorImpl>& impl) {
  return impl->grad.empty() ? nullptr : impl->grad.data();
}

thread_local Tape* g_active_tape = nullptr;

bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
  for (int64_t e : shape) check(e > 0, "tensor extents must be positive, got " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.impl_->data) v = rng.normal() * stddev;
  return t;
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  check(numel() == 1, "item() requires a one-element tensor, shape is " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

// ---- Tape ----

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("tape already replayed; double backward is not supported");
  consumed_ = true;
  if (loss.numel() != 1) fail("backward() expects a scalar loss, got shape " + shape_str(loss.shape()));
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
  check(a.dim(1) == b.dim(0),
        "matmul inner extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, m, k, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* ga = grad_ptr(ai)) {
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const double g = go[i * n + j];
            const double* brow = bi->data.data();
            for (int64_t kk = 0; kk < k; ++kk) ga[i * k + kk] += g * brow[kk * n + j];
          }
      }
      if (double* gb = grad_ptr(bi)) {
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const double av = ai->data[i * k + kk];
            const double* grow = go + i * n;
            for (int64_t j = 0; j < n; ++j) gb[kk * n + j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear expects x:[m,in] w:[out,in] b:[out]");
  check(x.dim(1) == w.dim(1),
        "linear input extent mismatch: x " + shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
  check(b.dim(0) == w.dim(0), "linear bias extent mismatch");
  const int64_t m = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  Tensor out({m, out_dim});
  const double* px = x.data();
  const double* pw = w.data();
  const double* pbias = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t o = 0; o < out_dim; ++o) {
      double acc = pbias[o];
      const double* xrow = px + i * in;
      const double* wrow = pw + o * in;
      for (int64_t j = 0; j < in; ++j) acc += xrow[j] * wrow[j];
      po[i * out_dim + o] = acc;
    }
  }
  if (tracing({&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([xi, wi, bi, oi, m, in, out_dim] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gx = grad_ptr(xi)) {
        for (int64_t i = 0; i < m; ++i)
          for (int64_t o = 0; o < out_dim; ++o) {
            const double g = go[i * out_dim + o];
            const double* wrow = wi->data.data() + o * in;
            for (int64_t j = 0; j < in; ++j) gx[i * in + j] += g * wrow[j];
          }
      }
      if (double* gw = grad_ptr(wi)) {
        for (int64_t i = 0; i < m; ++i)
          for (int64_t o = 0; o < out_dim; ++o) {
            const double g = go[i * out_dim + o];
            const double* xrow = xi->data.data() + i * in;
            for (int64_t j = 0; j < in; ++j) gw[o * in + j] += g * xrow[j];
          }
      }
      if (double* gb = grad_ptr(bi)) {
        for (int64_t i = 0; i < m; ++i)
          for (int64_t o = 0; o < out_dim; ++o) gb[o] += go[i * out_dim + o];
      }
    });
  }
  return out;
}

namespace {

struct ConvDims {
  int64_t n, cin, h, w, cout, kh, kw, oh, ow;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, bool depthwise) {
  check(x.rank() == 4, "conv input must be rank 4, got " + shape_str(x.shape()));
  check(w.rank() == 4, "conv weight must be rank 4, got " + shape_str(w.shape()));
  check(stride >= 1 && pad >= 0, "conv stride must be >= 1 and pad >= 0");
  ConvDims d;
  d.n = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (depthwise) {
    check(w.dim(1) == 1, "depthwise weight must be [C,1,Kh,Kw], got " + shape_str(w.shape()));
    check(w.dim(0) == d.cin, "depthwise channel mismatch: input " + shape_str(x.shape()) +
                                 " vs weight " + shape_str(w.shape()));
    d.cout = d.cin;
  } else {
    check(w.dim(1) == d.cin, "conv input-channel mismatch: input " + shape_str(x.shape()) +
                                 " vs weight " + shape_str(w.shape()));
    d.cout = w.dim(0);
  }
  const int64_t eh = d.h + 2 * pad - d.kh;
  const int64_t ew = d.w + 2 * pad - d.kw;
  // Output extent floor((H+2p-K)/s)+1 must be a positive integer, i.e. at
  // least one window has to fit inside the padded input.
  check(eh >= 0 && ew >= 0, "conv output extent not positive for input " + shape_str(x.shape()) +
                                ", kernel " + shape_str(w.shape()) + ", stride " +
                                std::to_string(stride) + ", pad " + std::to_string(pad));
  d.oh = eh / stride + 1;
  d.ow = ew / stride + 1;
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const ConvDims d = conv_dims(x, w, stride, pad, /*depthwise=*/false);
  Tensor out({d.n, d.cout, d.oh, d.ow});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t co = 0; co < d.cout; ++co) {
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = 0.0;
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            const double* xc = px + ((n * d.cin + ci) * d.h) * d.w;
            const double* wc = pw + ((co * d.cin + ci) * d.kh) * d.kw;
            for (int64_t kh = 0; kh < d.kh; ++kh) {
              const int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t kw = 0; kw < d.kw; ++kw) {
                const int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += xc[ih * d.w + iw] * wc[kh * d.kw + kw];
              }
            }
          }
          po[((n * d.cout + co) * d.oh + oh) * d.ow + ow] = acc;
        }
      }
    }
  }
  if (tracing({&x, &w})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    Tape::active()->record([xi, wi, oi, d] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      double* gx = grad_ptr(xi);
      double* gw = grad_ptr(wi);
      if (!gx && !gw) return;
      for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t co = 0; co < d.cout; ++co) {
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              const double g = go[((n * d.cout + co) * d.oh + oh) * d.ow + ow];
              if (g == 0.0) continue;
              for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double* xc = xi->data.data() + ((n * d.cin + ci) * d.h) * d.w;
                const double* wc = wi->data.data() + ((co * d.cin + ci) * d.kh) * d.kw;
                double* gxc = gx ? gx + ((n * d.cin + ci) * d.h) * d.w : nullptr;
                double* gwc = gw ? gw + ((co * d.cin + ci) * d.kh) * d.kw : nullptr;
                for (int64_t kh = 0; kh < d.kh; ++kh) {
                  const int64_t ih = oh * d.stride - d.pad + kh;
                  if (ih < 0 || ih >= d.h) continue;
                  for (int64_t kw = 0; kw < d.kw; ++kw) {
                    const int64_t iw = ow * d.stride - d.pad + kw;
                    if (iw < 0 || iw >= d.w) continue;
                    if (gxc) gxc[ih * d.w + iw] += g * wc[kh * d.kw + kw];
                    if (gwc) gwc[kh * d.kw + kw] += g * xc[ih * d.w + iw];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const ConvDims d = conv_dims(x, w, stride, pad, /*depthwise=*/true);
  Tensor out({d.n, d.cout, d.oh, d.ow});
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t c = 0; c < d.cout; ++c) {
      const double* xc = px + ((n * d.cin + c) * d.h) * d.w;
      const double* wc = pw + (c * d.kh) * d.kw;
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = 0.0;
          for (int64_t kh = 0; kh < d.kh; ++kh) {
            const int64_t ih = oh * d.stride - d.pad + kh;
            if (ih < 0 || ih >= d.h) continue;
            for (int64_t kw = 0; kw < d.kw; ++kw) {
              const int64_t iw = ow * d.stride - d.pad + kw;
              if (iw < 0 || iw >= d.w) continue;
              acc += xc[ih * d.w + iw] * wc[kh * d.kw + kw];
            }
          }
          po[((n * d.cout + c) * d.oh + oh) * d.ow + ow] = acc;
        }
      }
    }
  }
  if (tracing({&x, &w})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    Tape::active()->record([xi, wi, oi, d] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      double* gx = grad_ptr(xi);
      double* gw = grad_ptr(wi);
      if (!gx && !gw) return;
      for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t c = 0; c < d.cout; ++c) {
          const double* xc = xi->data.data() + ((n * d.cin + c) * d.h) * d.w;
          const double* wc = wi->data.data() + (c * d.kh) * d.kw;
          double* gxc = gx ? gx + ((n * d.cin + c) * d.h) * d.w : nullptr;
          double* gwc = gw ? gw + (c * d.kh) * d.kw : nullptr;
          for (int64_t oh = 0; oh < d.oh; ++oh) {
            for (int64_t ow = 0; ow < d.ow; ++ow) {
              const double g = go[((n * d.cout + c) * d.oh + oh) * d.ow + ow];
              if (g == 0.0) continue;
              for (int64_t kh = 0; kh < d.kh; ++kh) {
                const int64_t ih = oh * d.stride - d.pad + kh;
                if (ih < 0 || ih >= d.h) continue;
                for (int64_t kw = 0; kw < d.kw; ++kw) {
                  const int64_t iw = ow * d.stride - d.pad + kw;
                  if (iw < 0 || iw >= d.w) continue;
                  if (gxc) gxc[ih * d.w + iw] += g * wc[kh * d.kw + kw];
                  if (gwc) gwc[kh * d.kw + kw] += g * xc[ih * d.w + iw];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BNState& state,
                 BNMode mode, double momentum, double eps) {
  check(x.rank() == 4, "batchnorm expects a rank-4 input, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
        "batchnorm affine parameters must have " + std::to_string(c) + " channels");
  check(state.channels() == c, "batchnorm state sized " + std::to_string(state.channels()) +
                                   " but input has " + std::to_string(c) + " channels");
  const int64_t plane = h * w;
  const int64_t m = n * plane;

  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  std::vector<double> var(static_cast<size_t>(c), 0.0);
  const double* px = x.data();
  if (mode == BNMode::Train) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t bi = 0; bi < n; ++bi) {
        const double* p = px + ((bi * c + ci) * plane);
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (int64_t bi = 0; bi < n; ++bi) {
        const double* p = px + ((bi * c + ci) * plane);
        for (int64_t i = 0; i < plane; ++i) {
          const double dv = p[i] - mu;
          sq += dv * dv;
        }
      }
      mean[static_cast<size_t>(ci)] = mu;
      var[static_cast<size_t>(ci)] = sq / static_cast<double>(m);
    }
    for (int64_t ci = 0; ci < c; ++ci) {
      auto i = static_cast<size_t>(ci);
      state.running_mean[i] = (1.0 - momentum) * state.running_mean[i] + momentum * mean[i];
      state.running_var[i] = (1.0 - momentum) * state.running_var[i] + momentum * var[i];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor out(x.shape());
  double* po = out.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  std::vector<double> inv_sigma(static_cast<size_t>(c));
  for (int64_t ci = 0; ci < c; ++ci)
    inv_sigma[static_cast<size_t>(ci)] = 1.0 / std::sqrt(var[static_cast<size_t>(ci)] + eps);
  for (int64_t bi = 0; bi < n; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double mu = mean[static_cast<size_t>(ci)];
      const double is = inv_sigma[static_cast<size_t>(ci)];
      const double g = pg[ci], b = pb[ci];
      const double* p = px + ((bi * c + ci) * plane);
      double* q = po + ((bi * c + ci) * plane);
      for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + b;
    }
  }

  if (tracing({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), gi = gamma.impl(), bi_ = beta.impl(), oi = out.impl();
    const bool train = mode == BNMode::Train;
    Tape::active()->record([xi, gi, bi_, oi, mean, inv_sigma, n, c, plane, m, train] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      double* gx = grad_ptr(xi);
      double* gg = grad_ptr(gi);
      double* gb = grad_ptr(bi_);
      const double* px = xi->data.data();
      const double* pg = gi->data.data();
      for (int64_t ci = 0; ci < c; ++ci) {
        const double mu = mean[static_cast<size_t>(ci)];
        const double is = inv_sigma[static_cast<size_t>(ci)];
        // Reductions over the channel slice.
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t bi = 0; bi < n; ++bi) {
          const double* p = px + ((bi * c + ci) * plane);
          const double* g = go + ((bi * c + ci) * plane);
          for (int64_t i = 0; i < plane; ++i) {
            sum_dy += g[i];
            sum_dy_xhat += g[i] * (p[i] - mu) * is;
          }
        }
        if (gb) gb[ci] += sum_dy;
        if (gg) gg[ci] += sum_dy_xhat;
        if (gx) {
          const double gamma_is = pg[ci] * is;
          if (train) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (int64_t bi = 0; bi < n; ++bi) {
              const double* p = px + ((bi * c + ci) * plane);
              const double* g = go + ((bi * c + ci) * plane);
              double* q = gx + ((bi * c + ci) * plane);
              for (int64_t i = 0; i < plane; ++i) {
                const double xhat = (p[i] - mu) * is;
                q[i] += gamma_is * (g[i] - inv_m * (sum_dy + xhat * sum_dy_xhat));
              }
            }
          } else {
            for (int64_t bi = 0; bi < n; ++bi) {
              const double* g = go + ((bi * c + ci) * plane);
              double* q = gx + ((bi * c + ci) * plane);
              for (int64_t i = 0; i < plane; ++i) q[i] += gamma_is * g[i];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gx = grad_ptr(xi)) {
        for (int64_t i = 0; i < n; ++i)
          if (xi->data[static_cast<size_t>(i)] > 0.0) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(),
        "add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* ga = grad_ptr(ai))
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      if (double* gb = grad_ptr(bi))
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(),
        "mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (tracing({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape::active()->record([ai, bi, oi, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* ga = grad_ptr(ai))
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * bi->data[static_cast<size_t>(i)];
      if (double* gb = grad_ptr(bi))
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * ai->data[static_cast<size_t>(i)];
    });
  }
  return out;
}

namespace {

// Row-major strides for a shape.
std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

Tensor crop(const Tensor& t, const Shape& target) {
  const Shape& src = t.shape();
  check(target.size() == src.size(), "crop target rank " + std::to_string(target.size()) +
                                         " differs from source " + shape_str(src));
  for (size_t i = 0; i < src.size(); ++i)
    check(target[i] >= 1 && target[i] <= src[i],
          "crop target " + shape_str(target) + " out of range for source " + shape_str(src));
  Tensor out(target);
  const auto sst = strides_of(src);
  const auto ost = strides_of(target);
  const int64_t n = out.numel();
  const size_t rank = src.size();
  const double* ps = t.data();
  double* po = out.data();
  std::vector<int64_t> idx(rank, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t soff = 0;
    for (size_t i = 0; i < rank; ++i) soff += idx[i] * sst[i];
    po[flat] = ps[soff];
    for (size_t i = rank; i-- > 0;) {
      if (++idx[i] < target[i]) break;
      idx[i] = 0;
    }
  }
  if (tracing({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl(), oi = out.impl();
    Tape::active()->record([ti, oi, sst, target, rank, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gt = grad_ptr(ti)) {
        std::vector<int64_t> idx(rank, 0);
        for (int64_t flat = 0; flat < n; ++flat) {
          int64_t soff = 0;
          for (size_t i = 0; i < rank; ++i) soff += idx[i] * sst[i];
          gt[soff] += go[flat];
          for (size_t i = rank; i-- > 0;) {
            if (++idx[i] < target[i]) break;
            idx[i] = 0;
          }
        }
      }
    });
  }
  return out;
}

Tensor crop(const Tensor& w, int64_t co, int64_t ci) {
  check(w.rank() == 4, "4-d crop expects a conv weight, got " + shape_str(w.shape()));
  return crop(w, Shape{co, ci, w.dim(2), w.dim(3)});
}

Tensor reshape(const Tensor& t, const Shape& target) {
  check(shape_numel(target) == t.numel(), "reshape from " + shape_str(t.shape()) + " to " +
                                              shape_str(target) + " changes element count");
  Tensor out(target, t.buffer());
  if (tracing({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl(), oi = out.impl();
    const int64_t n = t.numel();
    Tape::active()->record([ti, oi, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gt = grad_ptr(ti))
        for (int64_t i = 0; i < n; ++i) gt[i] += go[i];
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  check(x.rank() == 4, "global_avg_pool expects rank 4, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / static_cast<double>(plane);
  for (int64_t bi = 0; bi < n; ++bi)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* p = px + (bi * c + ci) * plane;
      double s = 0.0;
      for (int64_t i = 0; i < plane; ++i) s += p[i];
      po[bi * c + ci] = s * inv;
    }
  if (tracing({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl(), oi = out.impl();
    Tape::active()->record([xi, oi, n, c, plane, inv] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gx = grad_ptr(xi)) {
        for (int64_t bi = 0; bi < n; ++bi)
          for (int64_t ci = 0; ci < c; ++ci) {
            const double g = go[bi * c + ci] * inv;
            double* q = gx + (bi * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i) q[i] += g;
          }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "softmax_cross_entropy expects [N,K] logits");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  check(static_cast<int64_t>(labels.size()) == n, "label count " + std::to_string(labels.size()) +
                                                      " does not match batch " + std::to_string(n));
  for (int lab : labels)
    check(lab >= 0 && lab < k, "label " + std::to_string(lab) + " out of range for " +
                                   std::to_string(k) + " classes");
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  const double* pl = logits.data();
  double loss_acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = pl + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (int64_t j = 0; j < k; ++j)
      (*probs)[static_cast<size_t>(i * k + j)] = std::exp(row[j] - mx) / denom;
    loss_acc += log_denom - (row[labels[static_cast<size_t>(i)]] - mx);
  }
  Tensor out({1}, std::vector<double>{loss_acc / static_cast<double>(n)});
  if (tracing({&logits})) {
    out.set_requires_grad(true);
    auto li = logits.impl(), oi = out.impl();
    Tape::active()->record([li, oi, probs, labels, n, k] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gl = grad_ptr(li)) {
        const double scale = go[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < k; ++j) {
            double v = (*probs)[static_cast<size_t>(i * k + j)];
            if (j == labels[static_cast<size_t>(i)]) v -= 1.0;
            gl[i * k + j] += scale * v;
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& t) {
  double s = 0.0;
  const double* p = t.data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) s += p[i];
  Tensor out({1}, std::vector<double>{s});
  if (tracing({&t})) {
    out.set_requires_grad(true);
    auto ti = t.impl(), oi = out.impl();
    Tape::active()->record([ti, oi, n] {
      const double* go = out_grad_ptr(oi);
      if (!go) return;
      if (double* gt = grad_ptr(ti))
        for (int64_t i = 0; i < n; ++i) gt[i] += go[0];
    });
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  check(logits.rank() == 2, "argmax_rows expects [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  const double* p = logits.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* row = p + i * k;
    int best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

void sgd_step(std::vector<Tensor>& params, std::vector<std::vector<double>>& velocity, double lr,
              double momentum, double weight_decay) {
  check(params.size() == velocity.size(), "sgd_step: one velocity buffer per parameter");
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    std::vector<double>& v = velocity[p];
    check(static_cast<int64_t>(v.size()) == t.numel(), "sgd_step: velocity shape mismatch");
    double* pd = t.data();
    std::vector<double>& g = t.grad();
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * pd[i];
      pd[i] -= lr * v[i];
    }
    t.zero_grad();
  }
}

Sgd::Sgd(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const Tensor& t : params_) velocity_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
}

void Sgd::step(double lr) { sgd_step(params_, velocity_, lr, momentum_, weight_decay_); }

}  // namespace prunekit
