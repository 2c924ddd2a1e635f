#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dropkit/errors.hpp"
#include "dropkit/layers.hpp"

namespace dropkit {

// SGD with classical momentum and coupled L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// Parameters flagged decay=false (batch-norm gamma/beta) skip the decay term.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

  void step(const ParamList& params, double lr) {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const ParamRef& p : params) velocity_.emplace_back(p.count, 0.0);
    }
    if (velocity_.size() != params.size()) throw ShapeError("optimizer parameter list changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ParamRef& p = params[i];
      std::vector<double>& v = velocity_[i];
      if (v.size() != p.count) throw ShapeError("velocity shape mismatch");
      const double wd = p.decay ? weight_decay_ : 0.0;
      for (std::size_t j = 0; j < p.count; ++j) {
        v[j] = momentum_ * v[j] + p.grad[j] + wd * p.value[j];
        p.value[j] -= lr * v[j];
      }
    }
  }

  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

enum class LrKind { step, cosine };

struct LrSchedule {
  LrKind kind = LrKind::step;
  double base_lr = 0.1;
  std::vector<std::size_t> milestones = {60, 120, 160};
  double factor = 0.2;
  double lr_min = 0.0;

  void validate() const {
    if (!(base_lr > 0.0)) throw ParameterError("base_lr must be positive");
    if (kind == LrKind::step) {
      if (!(factor > 0.0 && factor < 1.0)) throw ParameterError("factor must be in (0,1)");
      for (std::size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] <= milestones[i - 1])
          throw ParameterError("milestones must be strictly increasing");
    }
  }
};

inline double step_lr(const LrSchedule& sched, std::size_t epoch) {
  double lr = sched.base_lr;
  for (std::size_t m : sched.milestones)
    if (epoch >= m) lr *= sched.factor;
  return lr;
}

inline double cosine_lr(const LrSchedule& sched, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs == 0) throw ParameterError("cosine schedule needs total_epochs >= 1");
  if (epoch > total_epochs) throw ParameterError("epoch beyond total_epochs");
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return sched.lr_min +
         0.5 * (sched.base_lr - sched.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

inline double schedule_lr(const LrSchedule& sched, std::size_t epoch, std::size_t total_epochs) {
  return sched.kind == LrKind::step ? step_lr(sched, epoch) : cosine_lr(sched, epoch, total_epochs);
}

}  // namespace dropkit
