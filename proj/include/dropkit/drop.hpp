#pragma once

#include <string>
#include <vector>

#include "dropkit/errors.hpp"
#include "dropkit/mode.hpp"
#include "dropkit/rng.hpp"
#include "dropkit/tensor.hpp"

namespace dropkit {

// The four data-drop operators share one convention: masks are drawn fresh at
// every train-mode forward pass, stored post-scaling (0 or 1/p for the drop
// methods, the raw uniform factor for scalefilter), and eval mode returns the
// input bitwise unchanged.

enum class DropMethod { none, dropout, dropfilter, scalefilter, droppath };

enum class ScheduleKind { constant, curriculum };

enum class Granularity { per_sample, per_batch };

inline const char* to_string(DropMethod m) {
  switch (m) {
    case DropMethod::none: return "none";
    case DropMethod::dropout: return "dropout";
    case DropMethod::dropfilter: return "dropfilter";
    case DropMethod::scalefilter: return "scalefilter";
    case DropMethod::droppath: return "droppath";
  }
  return "?";
}

inline DropMethod drop_method_from_string(const std::string& s) {
  if (s == "none") return DropMethod::none;
  if (s == "dropout") return DropMethod::dropout;
  if (s == "dropfilter") return DropMethod::dropfilter;
  if (s == "scalefilter") return DropMethod::scalefilter;
  if (s == "droppath") return DropMethod::droppath;
  throw ConfigError("unknown drop method: " + s);
}

struct DropSpec {
  DropMethod method = DropMethod::none;
  double rate = 1.0;  // retention p for drop methods, amplitude q for scalefilter
  ScheduleKind schedule = ScheduleKind::constant;
  double start_rate = 1.0, end_rate = 1.0;
  Granularity granularity = Granularity::per_sample;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ParameterError("drop rate outside [0,1]");
    if (schedule == ScheduleKind::curriculum) {
      if (!(start_rate >= 0.0 && start_rate <= 1.0 && end_rate >= 0.0 && end_rate <= 1.0))
        throw ParameterError("curriculum endpoints outside [0,1]");
      if (start_rate < end_rate) throw ParameterError("curriculum rate must decrease");
    }
  }

  // Copy of this spec with the scheduled rate substituted in.
  DropSpec with_rate(double r) const {
    DropSpec s = *this;
    s.rate = r;
    return s;
  }
};

struct DropMask {
  DropMethod method = DropMethod::none;
  Tensor values;  // empty in eval mode
  double rate = 1.0;
};

struct DropResult {
  Tensor output;
  DropMask mask;
};

// Retaining rate in effect at `epoch`. Curriculum interpolates linearly from
// start_rate (first epoch) to end_rate (last epoch).
inline double retention_schedule(const DropSpec& spec, std::size_t epoch,
                                 std::size_t total_epochs) {
  if (total_epochs == 0) throw ParameterError("total_epochs must be >= 1");
  if (epoch >= total_epochs) throw ParameterError("epoch out of range");
  if (spec.schedule == ScheduleKind::constant) return spec.rate;
  if (total_epochs == 1) return spec.start_rate;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return spec.start_rate + (spec.end_rate - spec.start_rate) * t;
}

// Multiply by a previously drawn mask; identity when the mask is empty
// (eval mode). This is also the frozen-mask backward of every operator.
inline Tensor apply_mask(const Tensor& x, const DropMask& mask) {
  if (mask.values.empty()) return x;
  return mul_broadcast(x, mask.values);
}

inline Tensor dropout_apply_masked(const Tensor& x, const Tensor& bits, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("dropout needs p in (0,1] in train mode");
  Tensor mask(bits.shape());
  const double inv_p = 1.0 / p;
  for (std::size_t i = 0; i < bits.size(); ++i) mask[i] = bits[i] * inv_p;
  return mul_broadcast(x, mask);
}

// Elementwise Bernoulli mask, inverted-dropout scaling by 1/p in train mode.
inline DropResult dropout_apply(const Tensor& x, const DropSpec& spec, Rng& rng, Mode mode) {
  if (spec.method != DropMethod::dropout) throw ParameterError("spec.method must be dropout");
  spec.validate();
  if (mode == Mode::eval) return {x, {DropMethod::dropout, Tensor(), spec.rate}};
  const double p = spec.rate;
  if (p <= 0.0) throw ParameterError("dropout needs p > 0 in train mode");
  const Shape4& s = x.shape();
  const Shape4 ms = spec.granularity == Granularity::per_sample ? s : Shape4{1, s.c, s.h, s.w};
  Tensor mask(ms);
  const double inv_p = 1.0 / p;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) * inv_p;
  return {mul_broadcast(x, mask), {DropMethod::dropout, std::move(mask), p}};
}

inline Tensor dropfilter_apply_masked(const Tensor& x, const Tensor& bits, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("dropfilter needs p in (0,1]");
  Tensor mask(bits.shape());
  const double inv_p = 1.0 / p;
  for (std::size_t i = 0; i < bits.size(); ++i) mask[i] = bits[i] * inv_p;
  return mul_broadcast(x, mask);
}

// One Bernoulli draw per feature map: the map survives scaled by 1/p or is
// zeroed whole. Mask is (N, C, 1, 1) per sample, (1, C, 1, 1) per batch.
inline DropResult dropfilter_apply(const Tensor& x, const DropSpec& spec, Rng& rng, Mode mode) {
  if (spec.method != DropMethod::dropfilter) throw ParameterError("spec.method must be dropfilter");
  spec.validate();
  if (mode == Mode::eval) return {x, {DropMethod::dropfilter, Tensor(), spec.rate}};
  const double p = spec.rate;
  if (p <= 0.0) throw ParameterError("dropfilter needs p > 0");
  const Shape4& s = x.shape();
  const Shape4 ms = spec.granularity == Granularity::per_sample ? Shape4{s.n, s.c, 1, 1}
                                                                : Shape4{1, s.c, 1, 1};
  Tensor mask(ms);
  const double inv_p = 1.0 / p;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) * inv_p;
  Tensor out = spec.granularity == Granularity::per_sample ? broadcast_mul_channels(x, mask)
                                                           : mul_broadcast(x, mask);
  return {std::move(out), {DropMethod::dropfilter, std::move(mask), p}};
}

// One multiplicative factor per feature map, r ~ Uniform(1-q, 1+q). The mean
// of r is 1, so no rescale is applied in either mode.
inline DropResult scalefilter_apply(const Tensor& x, const DropSpec& spec, Rng& rng, Mode mode) {
  if (spec.method != DropMethod::scalefilter)
    throw ParameterError("spec.method must be scalefilter");
  spec.validate();
  if (mode == Mode::eval) return {x, {DropMethod::scalefilter, Tensor(), spec.rate}};
  const double q = spec.rate;
  const Shape4& s = x.shape();
  const Shape4 ms = spec.granularity == Granularity::per_sample ? Shape4{s.n, s.c, 1, 1}
                                                                : Shape4{1, s.c, 1, 1};
  Tensor mask(ms);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform(1.0 - q, 1.0 + q);
  Tensor out = spec.granularity == Granularity::per_sample ? broadcast_mul_channels(x, mask)
                                                           : mul_broadcast(x, mask);
  return {std::move(out), {DropMethod::scalefilter, std::move(mask), q}};
}

struct DropPathResult {
  std::vector<Tensor> outputs;
  std::vector<DropMask> masks;
};

inline Tensor droppath_apply_masked(const Tensor& branch, const Tensor& bits, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("droppath needs p in (0,1]");
  Tensor mask(bits.shape());
  const double inv_p = 1.0 / p;
  for (std::size_t i = 0; i < bits.size(); ++i) mask[i] = bits[i] * inv_p;
  return mul_broadcast(branch, mask);
}

// Bernoulli drop of whole branches; survivors scale by 1/p. Callers keep
// identity shortcuts out of `branches` — only droppable paths go in.
inline DropPathResult droppath_apply(const std::vector<Tensor>& branches, const DropSpec& spec,
                                     Rng& rng, Mode mode) {
  if (spec.method != DropMethod::droppath) throw ParameterError("spec.method must be droppath");
  spec.validate();
  if (branches.empty()) throw ParameterError("droppath needs at least one branch");
  DropPathResult res;
  if (mode == Mode::eval) {
    res.outputs = branches;
    for (std::size_t i = 0; i < branches.size(); ++i)
      res.masks.push_back({DropMethod::droppath, Tensor(), spec.rate});
    return res;
  }
  const double p = spec.rate;
  if (p <= 0.0) throw ParameterError("droppath needs p > 0");
  const double inv_p = 1.0 / p;
  for (const Tensor& branch : branches) {
    const Shape4 ms = spec.granularity == Granularity::per_sample
                          ? Shape4{branch.shape().n, 1, 1, 1}
                          : Shape4{1, 1, 1, 1};
    Tensor mask(ms);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) * inv_p;
    res.outputs.push_back(mul_broadcast(branch, mask));
    res.masks.push_back({DropMethod::droppath, std::move(mask), p});
  }
  return res;
}

}  // namespace dropkit
