#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dropkit/drop.hpp"
#include "dropkit/errors.hpp"
#include "dropkit/rng.hpp"
#include "dropkit/tensor.hpp"

namespace dropkit {

struct FreqTestReport {
  std::size_t n_trials = 0;
  double observed_rate = 0.0;
  double expected_rate = 0.0;
  double sigma_bound = 0.0;  // 3 sigma
  bool pass = false;
};

namespace detail {

inline bool map_is_zero(const Tensor& t, std::size_t n, std::size_t c) {
  for (std::size_t h = 0; h < t.shape().h; ++h)
    for (std::size_t w = 0; w < t.shape().w; ++w)
      if (t(n, c, h, w) != 0.0) return false;
  return true;
}

}  // namespace detail

// Draws masks through the real operator path and compares the observed drop
// fraction against its expectation: 1-p dropped elements for dropout, 1-p
// dropped maps for dropfilter, 1-p dropped branches for droppath. For
// scalefilter the check is distributional instead: the fraction of factors
// below 1 must be 1/2 (0 when q = 0, where the factor is exactly 1).
inline FreqTestReport check_mask_frequency(DropMethod method, double rate, std::size_t n_trials,
                                           Rng& rng) {
  if (n_trials < 10000) throw ParameterError("check_mask_frequency needs n_trials >= 10^4");
  FreqTestReport rep;
  std::size_t total = 0, hits = 0;
  double expected = 0.0;
  DropSpec spec;
  spec.method = method;
  spec.rate = rate;
  switch (method) {
    case DropMethod::dropout: {
      expected = 1.0 - rate;
      Tensor x(Shape4{4, 4, 8, 8}, 1.0);
      while (total < n_trials) {
        DropResult r = dropout_apply(x, spec, rng, Mode::train);
        for (std::size_t i = 0; i < r.output.size(); ++i) {
          ++total;
          if (r.output[i] == 0.0) ++hits;
        }
      }
      break;
    }
    case DropMethod::dropfilter: {
      expected = 1.0 - rate;
      Tensor x(Shape4{16, 16, 2, 2}, 1.0);
      while (total < n_trials) {
        DropResult r = dropfilter_apply(x, spec, rng, Mode::train);
        for (std::size_t n = 0; n < x.shape().n; ++n)
          for (std::size_t c = 0; c < x.shape().c; ++c) {
            ++total;
            if (detail::map_is_zero(r.output, n, c)) ++hits;
          }
      }
      break;
    }
    case DropMethod::droppath: {
      expected = 1.0 - rate;
      std::vector<Tensor> branches(16, Tensor(Shape4{8, 1, 4, 4}, 1.0));
      while (total < n_trials) {
        DropPathResult r = droppath_apply(branches, spec, rng, Mode::train);
        for (const Tensor& out : r.outputs)
          for (std::size_t n = 0; n < out.shape().n; ++n) {
            ++total;
            if (detail::map_is_zero(out, n, 0)) ++hits;
          }
      }
      break;
    }
    case DropMethod::scalefilter: {
      expected = rate == 0.0 ? 0.0 : 0.5;
      Tensor x(Shape4{16, 16, 1, 1}, 1.0);
      while (total < n_trials) {
        DropResult r = scalefilter_apply(x, spec, rng, Mode::train);
        for (std::size_t i = 0; i < r.mask.values.size(); ++i) {
          ++total;
          if (r.mask.values[i] < 1.0) ++hits;
        }
      }
      break;
    }
    case DropMethod::none:
      throw ParameterError("check_mask_frequency: method must not be none");
  }
  rep.n_trials = total;
  rep.observed_rate = static_cast<double>(hits) / static_cast<double>(total);
  rep.expected_rate = expected;
  rep.sigma_bound =
      3.0 * std::sqrt(expected * (1.0 - expected) / static_cast<double>(total));
  rep.pass = std::abs(rep.observed_rate - rep.expected_rate) <= rep.sigma_bound;
  return rep;
}

struct ExpectationReport {
  double max_rel_deviation = 0.0;
  double bound = 0.0;  // 4 sigma on the mean of the mask factor
  bool pass = false;
};

// Monte-Carlo check that E[op(x)] = x elementwise. Deviations are accumulated
// as op(x) - x so the identity settings (p = 1, q = 0) come out exactly zero.
// Mask-factor variance: (1-p)/p for dropout/dropfilter/droppath, q^2/3 for
// scalefilter.
inline ExpectationReport check_expectation_preserved(DropMethod method, double rate,
                                                     const Tensor& x, std::size_t m_draws,
                                                     Rng& rng) {
  if (m_draws < 1000) throw ParameterError("check_expectation_preserved needs m_draws >= 10^3");
  DropSpec spec;
  spec.method = method;
  spec.rate = rate;
  Tensor delta_sum(x.shape(), 0.0);
  for (std::size_t d = 0; d < m_draws; ++d) {
    Tensor out;
    switch (method) {
      case DropMethod::dropout: out = dropout_apply(x, spec, rng, Mode::train).output; break;
      case DropMethod::dropfilter: out = dropfilter_apply(x, spec, rng, Mode::train).output; break;
      case DropMethod::scalefilter:
        out = scalefilter_apply(x, spec, rng, Mode::train).output;
        break;
      case DropMethod::droppath:
        out = droppath_apply({x}, spec, rng, Mode::train).outputs[0];
        break;
      case DropMethod::none:
        throw ParameterError("check_expectation_preserved: method must not be none");
    }
    for (std::size_t i = 0; i < x.size(); ++i) delta_sum[i] += out[i] - x[i];
  }
  ExpectationReport rep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double rel = std::abs(delta_sum[i] / static_cast<double>(m_draws)) / std::abs(x[i]);
    rep.max_rel_deviation = std::max(rep.max_rel_deviation, rel);
  }
  const double var = method == DropMethod::scalefilter ? rate * rate / 3.0 : (1.0 - rate) / rate;
  rep.bound = 4.0 * std::sqrt(var / static_cast<double>(m_draws));
  rep.pass = rep.max_rel_deviation <= rep.bound;
  return rep;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central-difference check of an analytic gradient. `loss` is re-evaluated
// after perturbing each coordinate of `values` in place; `analytic` holds the
// gradient being verified, in the same coordinate order.
template <typename LossFn>
double gradient_check(LossFn&& loss, std::span<double> values, std::span<const double> analytic,
                      double step) {
  if (!(step >= 1e-6 && step <= 1e-3)) throw ParameterError("step must be in [1e-6, 1e-3]");
  if (values.size() != analytic.size()) throw ShapeError("gradient_check size mismatch");
  double max_rel = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double lp = loss();
    values[i] = saved - step;
    const double lm = loss();
    values[i] = saved;
    if (!std::isfinite(lp) || !std::isfinite(lm)) throw NumericError("non-finite loss in gradient_check");
    const double numeric = (lp - lm) / (2.0 * step);
    max_rel = std::max(max_rel, relative_error(analytic[i], numeric));
  }
  return max_rel;
}

}  // namespace dropkit
