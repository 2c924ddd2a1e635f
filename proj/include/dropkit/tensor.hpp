#pragma once

#include <cassert>
#include <cstddef>
#include <cstring>
#include <vector>

#include "dropkit/errors.hpp"

namespace dropkit {

struct Shape4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  bool operator==(const Shape4&) const = default;

  // Element count with overflow check.
  std::size_t count() const {
    std::size_t p = n;
    for (std::size_t d : {c, h, w}) {
      if (d != 0 && p > static_cast<std::size_t>(-1) / d) throw SizeError("shape product overflows");
      p *= d;
    }
    return p;
  }
};

// Dense rank-4 array in (N, C, H, W) row-major layout, 64-bit floats.
// One contiguous (H, W) slice per feature map.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape4 shape, double fill = 0.0) : shape_(shape), data_(shape.count(), fill) {}

  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : Tensor(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    assert(n < shape_.n && c < shape_.c && h < shape_.h && w < shape_.w);
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  const double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    assert(n < shape_.n && c < shape_.c && h < shape_.h && w < shape_.w);
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_bits(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
  }

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

inline Tensor tensor_new(Shape4 shape, double fill) { return Tensor(shape, fill); }

// out[n,c,h,w] = x[n,c,h,w] * m[n,c,0,0]; m must be (N, C, 1, 1).
inline Tensor broadcast_mul_channels(const Tensor& x, const Tensor& m) {
  const Shape4& xs = x.shape();
  const Shape4& ms = m.shape();
  if (ms.n != xs.n || ms.c != xs.c || ms.h != 1 || ms.w != 1)
    throw ShapeError("broadcast_mul_channels expects mask (N,C,1,1) matching x");
  Tensor out(xs);
  const std::size_t plane = xs.h * xs.w;
  const double* xp = x.data();
  double* op = out.data();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const double s = m(n, c, 0, 0);
      const std::size_t base = (n * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) op[base + i] = xp[base + i] * s;
    }
  }
  return out;
}

// General masked multiply: every mask dimension is either 1 or equal to x's.
inline Tensor mul_broadcast(const Tensor& x, const Tensor& m) {
  const Shape4& xs = x.shape();
  const Shape4& ms = m.shape();
  auto ok = [](std::size_t md, std::size_t xd) { return md == 1 || md == xd; };
  if (!ok(ms.n, xs.n) || !ok(ms.c, xs.c) || !ok(ms.h, xs.h) || !ok(ms.w, xs.w))
    throw ShapeError("mul_broadcast: mask dims must be 1 or match x");
  Tensor out(xs);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t h = 0; h < xs.h; ++h)
        for (std::size_t w = 0; w < xs.w; ++w)
          out(n, c, h, w) = x(n, c, h, w) * m(ms.n == 1 ? 0 : n, ms.c == 1 ? 0 : c,
                                              ms.h == 1 ? 0 : h, ms.w == 1 ? 0 : w);
  return out;
}

}  // namespace dropkit
