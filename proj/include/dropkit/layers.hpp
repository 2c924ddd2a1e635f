#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dropkit/errors.hpp"
#include "dropkit/gemm.hpp"
#include "dropkit/mode.hpp"
#include "dropkit/parallel.hpp"
#include "dropkit/rng.hpp"
#include "dropkit/tensor.hpp"

namespace dropkit {

// Named view of one parameter block plus its gradient buffer. `decay`
// marks participation in L2 weight decay (batch-norm gamma/beta opt out).
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t count = 0;
  bool decay = true;
};

using ParamList = std::vector<ParamRef>;

// 2-D cross-correlation with zero padding, im2col + GEMM under the hood.
// The im2col buffer is built over batch chunks to bound memory.
class Conv2d {
 public:
  Conv2d() = default;

  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride = 1, std::size_t pad = 0)
      : in_channels_(in_channels),
        out_channels_(out_channels),
        kernel_(kernel),
        stride_(stride),
        pad_(pad),
        weight(Shape4{out_channels, in_channels, kernel, kernel}),
        wgrad(Shape4{out_channels, in_channels, kernel, kernel}),
        bias(out_channels, 0.0),
        bgrad(out_channels, 0.0) {
    if (kernel < 1 || stride < 1) throw ParameterError("conv kernel and stride must be >= 1");
  }

  // Zero-mean Gaussian with std sqrt(2 / (k*k*C_in)), biases zero.
  void init_he(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(kernel_ * kernel_ * in_channels_));
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = stddev * rng.normal();
    std::fill(bias.begin(), bias.end(), 0.0);
  }

  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t pad() const { return pad_; }
  std::size_t param_count() const { return weight.size() + bias.size(); }

  Shape4 output_shape(const Shape4& in) const {
    if (in.c != in_channels_) throw ShapeError("conv input channel mismatch");
    const long long oh = out_extent(in.h);
    const long long ow = out_extent(in.w);
    if (oh < 1 || ow < 1) throw ShapeError("conv output spatial size < 1");
    return Shape4{in.n, out_channels_, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
  }

  Tensor forward(const Tensor& x, Mode mode) {
    if (mode == Mode::train) x_cache_ = x;
    return forward_pure(x);
  }

  Tensor forward_pure(const Tensor& x) const {
    const Shape4 os = output_shape(x.shape());
    Tensor out(os);
    const std::size_t rows = in_channels_ * kernel_ * kernel_;
    const std::size_t plane = os.h * os.w;
    const auto spans = batch_spans(x.shape().n, rows, plane, out_channels_);
    run_spans(spans.size(), [&](std::size_t si) {
      const auto [n0, nb] = spans[si];
      const std::size_t ncols = nb * plane;
      std::vector<double>& cols = scratch_buffer(0, rows * ncols);
      im2col(x, n0, nb, os, cols.data());
      std::vector<double>& prod = scratch_buffer(1, out_channels_ * ncols);
      gemm(false, false, out_channels_, ncols, rows, 1.0, weight.data(), rows, cols.data(), ncols,
           0.0, prod.data(), ncols);
      for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t o = 0; o < out_channels_; ++o) {
          const double* src = prod.data() + o * ncols + n * plane;
          double* dst = &out(n0 + n, o, 0, 0);
          const double b = bias[o];
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
        }
    });
    return out;
  }

  // Accumulates weight/bias grads, returns grad wrt the cached input.
  Tensor backward(const Tensor& grad_out) { return backward_explicit(x_cache_, grad_out); }

  Tensor backward_explicit(const Tensor& x, const Tensor& grad_out) {
    const Shape4 os = output_shape(x.shape());
    if (!(grad_out.shape() == os)) throw ShapeError("conv grad_out shape mismatch");
    Tensor grad_x(x.shape());
    const std::size_t rows = in_channels_ * kernel_ * kernel_;
    const std::size_t plane = os.h * os.w;
    const auto spans = batch_spans(x.shape().n, rows, plane, out_channels_);
    // Per-span partial weight/bias grads keep the accumulation order fixed
    // regardless of which thread ran which span.
    std::vector<std::vector<double>> w_partial(spans.size());
    std::vector<std::vector<double>> b_partial(spans.size());
    run_spans(spans.size(), [&](std::size_t si) {
      const auto [n0, nb] = spans[si];
      const std::size_t ncols = nb * plane;
      std::vector<double>& cols = scratch_buffer(0, rows * ncols);
      im2col(x, n0, nb, os, cols.data());
      // Fully overwritten below, no clearing needed.
      std::vector<double>& gmat = scratch_buffer(1, out_channels_ * ncols);
      for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t o = 0; o < out_channels_; ++o) {
          const double* src = &grad_out(n0 + n, o, 0, 0);
          double* dst = gmat.data() + o * ncols + n * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
        }
      // dW = G * B^T, db = row sums of G, for this span.
      w_partial[si].assign(weight.size(), 0.0);
      gemm(false, true, out_channels_, rows, ncols, 1.0, gmat.data(), ncols, cols.data(), ncols,
           0.0, w_partial[si].data(), rows);
      b_partial[si].assign(out_channels_, 0.0);
      for (std::size_t o = 0; o < out_channels_; ++o) {
        double s = 0.0;
        const double* row = gmat.data() + o * ncols;
        for (std::size_t i = 0; i < ncols; ++i) s += row[i];
        b_partial[si][o] = s;
      }
      // dX = col2im(W^T * G); spans write disjoint batch ranges.
      std::vector<double>& colgrad = scratch_buffer(2, rows * ncols);
      gemm(true, false, rows, ncols, out_channels_, 1.0, weight.data(), rows, gmat.data(), ncols,
           0.0, colgrad.data(), ncols);
      col2im_add(colgrad.data(), n0, nb, os, grad_x);
    });
    for (std::size_t si = 0; si < spans.size(); ++si) {
      for (std::size_t i = 0; i < weight.size(); ++i) wgrad[i] += w_partial[si][i];
      for (std::size_t o = 0; o < out_channels_; ++o) bgrad[o] += b_partial[si][o];
    }
    return grad_x;
  }

  void zero_grad() {
    wgrad.fill(0.0);
    std::fill(bgrad.begin(), bgrad.end(), 0.0);
  }

  void visit_params(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".w", weight.data(), wgrad.data(), weight.size(), true});
    out.push_back({prefix + ".b", bias.data(), bgrad.data(), bias.size(), true});
  }

  Tensor weight, wgrad;
  std::vector<double> bias, bgrad;

 private:
  long long out_extent(std::size_t in) const {
    return (static_cast<long long>(in) + 2 * static_cast<long long>(pad_) -
            static_cast<long long>(kernel_)) /
               static_cast<long long>(stride_) +
           1;
  }

  // Batch ranges sized by two constraints: the im2col buffer stays under a
  // fixed byte budget, and work big enough to matter is split across the two
  // hardware threads.
  static std::vector<std::pair<std::size_t, std::size_t>> batch_spans(std::size_t n,
                                                                      std::size_t rows,
                                                                      std::size_t plane,
                                                                      std::size_t out_ch) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    if (n == 0) return spans;
    const std::size_t per_image_bytes = rows * plane * sizeof(double);
    const std::size_t budget = std::size_t(48) << 20;
    std::size_t chunk = std::clamp<std::size_t>(
        per_image_bytes ? budget / per_image_bytes : n, 1, n);
    const double flops = 2.0 * static_cast<double>(rows) * static_cast<double>(plane) *
                         static_cast<double>(n) * static_cast<double>(out_ch);
    if (flops > 8e6 && n >= 2) chunk = std::min(chunk, (n + 1) / 2);
    for (std::size_t n0 = 0; n0 < n; n0 += chunk) spans.emplace_back(n0, std::min(chunk, n - n0));
    return spans;
  }

  template <typename Fn>
  static void run_spans(std::size_t count, Fn&& fn) {
    if (count <= 1) {
      for (std::size_t i = 0; i < count; ++i) fn(i);
      return;
    }
    detail::PairWorker::instance().run_pair(
        [&] {
          for (std::size_t i = 0; i < count; i += 2) fn(i);
        },
        [&] {
          for (std::size_t i = 1; i < count; i += 2) fn(i);
        });
  }

  // Grow-only per-thread workspaces shared by all conv layers; large batch
  // buffers would otherwise be remapped by the allocator on every call.
  static std::vector<double>& scratch_buffer(std::size_t which, std::size_t need) {
    thread_local std::vector<double> buffers[3];
    std::vector<double>& buf = buffers[which];
    if (buf.size() < need) buf.resize(need);
    return buf;
  }

  // Valid ow range for a kernel column offset v: ow*stride + v - pad in [0, W).
  std::pair<std::size_t, std::size_t> valid_ow_range(std::size_t v, std::size_t in_w,
                                                     std::size_t out_w) const {
    std::size_t lo = 0;
    if (pad_ > v) lo = (pad_ - v + stride_ - 1) / stride_;
    std::size_t hi = out_w;
    if (in_w + pad_ > v) {
      const std::size_t max_plus_one = (in_w + pad_ - v + stride_ - 1) / stride_;
      hi = std::min(out_w, max_plus_one);
    } else {
      hi = 0;
    }
    return {std::min(lo, hi), hi};
  }

  void im2col(const Tensor& x, std::size_t n0, std::size_t nb, const Shape4& os,
              double* cols) const {
    const Shape4& is = x.shape();
    const std::size_t plane = os.h * os.w;
    const std::size_t ncols = nb * plane;
    for (std::size_t c = 0; c < in_channels_; ++c)
      for (std::size_t u = 0; u < kernel_; ++u)
        for (std::size_t v = 0; v < kernel_; ++v) {
          double* row = cols + ((c * kernel_ + u) * kernel_ + v) * ncols;
          const auto [lo, hi] = valid_ow_range(v, is.w, os.w);
          for (std::size_t n = 0; n < nb; ++n)
            for (std::size_t oh = 0; oh < os.h; ++oh) {
              const long long ih = static_cast<long long>(oh * stride_ + u) -
                                   static_cast<long long>(pad_);
              double* dst = row + (n * os.h + oh) * os.w;
              if (ih < 0 || ih >= static_cast<long long>(is.h)) {
                std::memset(dst, 0, os.w * sizeof(double));
                continue;
              }
              const double* src = &x(n0 + n, c, static_cast<std::size_t>(ih), 0);
              for (std::size_t ow = 0; ow < lo; ++ow) dst[ow] = 0.0;
              if (stride_ == 1) {
                if (hi > lo)
                  std::memcpy(dst + lo, src + (lo + v - pad_), (hi - lo) * sizeof(double));
              } else {
                for (std::size_t ow = lo; ow < hi; ++ow)
                  dst[ow] = src[ow * stride_ + v - pad_];
              }
              for (std::size_t ow = hi; ow < os.w; ++ow) dst[ow] = 0.0;
            }
        }
  }

  void col2im_add(const double* cols, std::size_t n0, std::size_t nb, const Shape4& os,
                  Tensor& gx) const {
    const Shape4& is = gx.shape();
    const std::size_t plane = os.h * os.w;
    const std::size_t ncols = nb * plane;
    for (std::size_t c = 0; c < in_channels_; ++c)
      for (std::size_t u = 0; u < kernel_; ++u)
        for (std::size_t v = 0; v < kernel_; ++v) {
          const double* row = cols + ((c * kernel_ + u) * kernel_ + v) * ncols;
          const auto [lo, hi] = valid_ow_range(v, is.w, os.w);
          for (std::size_t n = 0; n < nb; ++n)
            for (std::size_t oh = 0; oh < os.h; ++oh) {
              const long long ih = static_cast<long long>(oh * stride_ + u) -
                                   static_cast<long long>(pad_);
              if (ih < 0 || ih >= static_cast<long long>(is.h)) continue;
              const double* src = row + (n * os.h + oh) * os.w;
              double* dst = &gx(n0 + n, c, static_cast<std::size_t>(ih), 0);
              for (std::size_t ow = lo; ow < hi; ++ow)
                dst[ow * stride_ + v - pad_] += src[ow];
            }
        }
  }

  std::size_t in_channels_ = 0, out_channels_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
  Tensor x_cache_;
};

// Per-channel batch normalization over (N, H, W). Train mode uses batch
// statistics and maintains running averages; eval mode reads only the
// running statistics.
class BatchNorm {
 public:
  BatchNorm() = default;

  explicit BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.9)
      : channels_(channels),
        eps_(eps),
        momentum_(momentum),
        gamma(channels, 1.0),
        beta(channels, 0.0),
        ggrad(channels, 0.0),
        bgrad(channels, 0.0),
        running_mean(channels, 0.0),
        running_var(channels, 1.0) {}

  std::size_t channels() const { return channels_; }
  double eps() const { return eps_; }
  std::size_t param_count() const { return 2 * channels_; }

  Tensor forward(const Tensor& x, Mode mode) {
    const Shape4& s = x.shape();
    if (s.c != channels_) throw ShapeError("batchnorm channel mismatch");
    Tensor out(s);
    const std::size_t m = s.n * s.h * s.w;
    const std::size_t plane = s.h * s.w;
    if (mode == Mode::train) {
      if (m <= 1) throw NumericError("batchnorm needs more than one value per channel in train mode");
      mode_cache_ = Mode::train;
      m_cache_ = m;
      invstd_.assign(channels_, 0.0);
      xhat_ = Tensor(s);
      for (std::size_t c = 0; c < channels_; ++c) {
        double mean = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* src = &x(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) mean += src[i];
        }
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* src = &x(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = src[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + eps_);
        invstd_[c] = inv;
        const double g = gamma[c], b = beta[c];
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* src = &x(n, c, 0, 0);
          double* xh = &xhat_(n, c, 0, 0);
          double* dst = &out(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            xh[i] = (src[i] - mean) * inv;
            dst[i] = g * xh[i] + b;
          }
        }
        running_mean[c] = momentum_ * running_mean[c] + (1.0 - momentum_) * mean;
        running_var[c] = momentum_ * running_var[c] + (1.0 - momentum_) * var;
      }
    } else {
      mode_cache_ = Mode::eval;
      for (std::size_t c = 0; c < channels_; ++c) {
        const double inv = 1.0 / std::sqrt(running_var[c] + eps_);
        const double g = gamma[c], b = beta[c], mu = running_mean[c];
        for (std::size_t n = 0; n < s.n; ++n) {
          const double* src = &x(n, c, 0, 0);
          double* dst = &out(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mu) * inv + b;
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out) {
    const Shape4& s = grad_out.shape();
    if (s.c != channels_) throw ShapeError("batchnorm grad channel mismatch");
    Tensor gx(s);
    if (mode_cache_ == Mode::eval) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double scale = gamma[c] / std::sqrt(running_var[c] + eps_);
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) gx(n, c, h, w) = grad_out(n, c, h, w) * scale;
      }
      return gx;
    }
    const double m = static_cast<double>(m_cache_);
    const std::size_t plane = s.h * s.w;
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* g = &grad_out(n, c, 0, 0);
        const double* xh = &xhat_(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xh[i];
        }
      }
      ggrad[c] += sum_gx;
      bgrad[c] += sum_g;
      const double scale = gamma[c] * invstd_[c] / m;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* g = &grad_out(n, c, 0, 0);
        const double* xh = &xhat_(n, c, 0, 0);
        double* dst = &gx(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i)
          dst[i] = scale * (m * g[i] - sum_g - xh[i] * sum_gx);
      }
    }
    return gx;
  }

  void zero_grad() {
    std::fill(ggrad.begin(), ggrad.end(), 0.0);
    std::fill(bgrad.begin(), bgrad.end(), 0.0);
  }

  void visit_params(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".gamma", gamma.data(), ggrad.data(), gamma.size(), false});
    out.push_back({prefix + ".beta", beta.data(), bgrad.data(), beta.size(), false});
  }

  // Running statistics: serialized state, never touched by the optimizer.
  void visit_state(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".running_mean", running_mean.data(), nullptr, running_mean.size(),
                   false});
    out.push_back({prefix + ".running_var", running_var.data(), nullptr, running_var.size(),
                   false});
  }

  std::vector<double> gamma, beta, ggrad, bgrad, running_mean, running_var;

 private:
  std::size_t channels_ = 0;
  double eps_ = 1e-5, momentum_ = 0.9;
  Mode mode_cache_ = Mode::eval;
  std::size_t m_cache_ = 0;
  std::vector<double> invstd_;
  Tensor xhat_;
};

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

// ReLU with the zero-at-zero subgradient on the backward pass.
class Relu {
 public:
  Tensor forward(const Tensor& x, Mode mode) {
    if (mode == Mode::train) x_cache_ = x;
    return relu(x);
  }

  Tensor backward(const Tensor& grad_out) {
    if (!(grad_out.shape() == x_cache_.shape())) throw ShapeError("relu grad shape mismatch");
    Tensor gx(grad_out.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x_cache_[i] > 0.0 ? grad_out[i] : 0.0;
    return gx;
  }

 private:
  Tensor x_cache_;
};

inline Tensor global_avg_pool(const Tensor& x) {
  const Shape4& s = x.shape();
  if (s.h * s.w == 0) throw ShapeError("global_avg_pool on empty spatial extent");
  Tensor out(Shape4{s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w) sum += x(n, c, h, w);
      out(n, c, 0, 0) = sum * inv;
    }
  return out;
}

class GlobalAvgPool {
 public:
  Tensor forward(const Tensor& x, Mode) {
    in_shape_ = x.shape();
    return global_avg_pool(x);
  }

  Tensor backward(const Tensor& grad_out) {
    if (!(grad_out.shape() == Shape4{in_shape_.n, in_shape_.c, 1, 1}))
      throw ShapeError("global_avg_pool grad shape mismatch");
    Tensor gx(in_shape_);
    const double inv = 1.0 / static_cast<double>(in_shape_.h * in_shape_.w);
    for (std::size_t n = 0; n < in_shape_.n; ++n)
      for (std::size_t c = 0; c < in_shape_.c; ++c) {
        const double g = grad_out(n, c, 0, 0) * inv;
        for (std::size_t h = 0; h < in_shape_.h; ++h)
          for (std::size_t w = 0; w < in_shape_.w; ++w) gx(n, c, h, w) = g;
      }
    return gx;
  }

 private:
  Shape4 in_shape_;
};

// Fully connected layer on (N, C_in, 1, 1) activations.
class Linear {
 public:
  Linear() = default;

  Linear(std::size_t in_features, std::size_t out_features)
      : in_features_(in_features),
        out_features_(out_features),
        weight(Shape4{out_features, in_features, 1, 1}),
        wgrad(Shape4{out_features, in_features, 1, 1}),
        bias(out_features, 0.0),
        bgrad(out_features, 0.0) {}

  void init_he(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_features_));
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = stddev * rng.normal();
    std::fill(bias.begin(), bias.end(), 0.0);
  }

  std::size_t in_features() const { return in_features_; }
  std::size_t out_features() const { return out_features_; }
  std::size_t param_count() const { return weight.size() + bias.size(); }

  Tensor forward(const Tensor& x, Mode mode) {
    const Shape4& s = x.shape();
    if (s.c != in_features_ || s.h != 1 || s.w != 1)
      throw ShapeError("linear expects (N, in_features, 1, 1)");
    if (mode == Mode::train) x_cache_ = x;
    Tensor out(Shape4{s.n, out_features_, 1, 1});
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t o = 0; o < out_features_; ++o) {
        double acc = bias[o];
        for (std::size_t i = 0; i < in_features_; ++i) acc += weight(o, i, 0, 0) * x(n, i, 0, 0);
        out(n, o, 0, 0) = acc;
      }
    return out;
  }

  Tensor backward(const Tensor& grad_out) {
    const Shape4& s = grad_out.shape();
    if (s.c != out_features_ || !(x_cache_.shape().n == s.n))
      throw ShapeError("linear grad shape mismatch");
    Tensor gx(x_cache_.shape());
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t o = 0; o < out_features_; ++o) {
        const double g = grad_out(n, o, 0, 0);
        bgrad[o] += g;
        for (std::size_t i = 0; i < in_features_; ++i) {
          wgrad(o, i, 0, 0) += g * x_cache_(n, i, 0, 0);
          gx(n, i, 0, 0) += g * weight(o, i, 0, 0);
        }
      }
    return gx;
  }

  void zero_grad() {
    wgrad.fill(0.0);
    std::fill(bgrad.begin(), bgrad.end(), 0.0);
  }

  void visit_params(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".w", weight.data(), wgrad.data(), weight.size(), true});
    out.push_back({prefix + ".b", bias.data(), bgrad.data(), bias.size(), true});
  }

  Tensor weight, wgrad;
  std::vector<double> bias, bgrad;

 private:
  std::size_t in_features_ = 0, out_features_ = 0;
  Tensor x_cache_;
};

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad;  // d(mean loss)/d(logits)
};

// Mean softmax cross-entropy over the batch, max-subtracted for stability.
// Gradient is (softmax - onehot) / batch_size.
inline CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Shape4& s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("logits must be (N, K, 1, 1)");
  if (labels.size() != s.n) throw ShapeError("label count must match batch size");
  const std::size_t k = s.c;
  CrossEntropyResult res;
  res.grad = Tensor(s);
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw DataError("label out of range");
    double mx = logits(n, 0, 0, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits(n, c, 0, 0));
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits(n, c, 0, 0) - mx);
    total += std::log(z) + mx - logits(n, static_cast<std::size_t>(label), 0, 0);
    const double inv_n = 1.0 / static_cast<double>(s.n);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(logits(n, c, 0, 0) - mx) / z;
      res.grad(n, c, 0, 0) =
          (p - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) * inv_n;
    }
  }
  res.loss = total / static_cast<double>(s.n);
  return res;
}

}  // namespace dropkit
