#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "dropkit/rng.hpp"
#include "dropkit/tensor.hpp"

namespace testutil {

inline dropkit::Tensor random_tensor(dropkit::Shape4 shape, dropkit::Rng& rng, double lo = -1.0,
                                     double hi = 1.0) {
  dropkit::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const dropkit::Tensor& a, const dropkit::Tensor& b) {
  if (!(a.shape() == b.shape())) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
