#pragma once

#include <string>
#include <vector>

#include "dropkit/format.hpp"
#include "dropkit/layers.hpp"
#include "dropkit/model.hpp"
#include "dropkit/validate.hpp"

namespace dropkit {

struct SuiteCase {
  std::string suite;
  std::string name;
  double observed = 0.0;
  double bound = 0.0;
  bool pass = false;
};

// Observed drop/scale frequencies through the real operator paths against
// their 3-sigma bounds, p in {0.5, 0.8, 0.9, 0.95}, 10^5 draws, pinned seeds.
inline std::vector<SuiteCase> run_mask_suite() {
  std::vector<SuiteCase> out;
  const DropMethod methods[] = {DropMethod::dropout, DropMethod::dropfilter,
                                DropMethod::scalefilter, DropMethod::droppath};
  const double rates[] = {0.5, 0.8, 0.9, 0.95};
  std::uint64_t seed = 90001;
  for (DropMethod m : methods)
    for (double rate : rates) {
      Rng rng(seed++);
      FreqTestReport rep = check_mask_frequency(m, rate, 100000, rng);
      out.push_back({"masks", std::string(to_string(m)) + "@" + format_metric(rate),
                     std::abs(rep.observed_rate - rep.expected_rate), rep.sigma_bound, rep.pass});
    }
  return out;
}

// Monte-Carlo expectation preservation against the 4-sigma bounds:
// dropout/dropfilter/droppath at p in {0.8, 0.9}, scalefilter at
// q in {0.2, 0.4, 0.6}, 10^4 draws each.
inline std::vector<SuiteCase> run_expectation_suite() {
  std::vector<SuiteCase> out;
  Rng fixture_rng(424242);
  Tensor x(Shape4{2, 3, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = fixture_rng.uniform(1.0, 2.0);
  std::uint64_t seed = 91001;
  auto run = [&](DropMethod m, double rate) {
    Rng rng(seed++);
    ExpectationReport rep = check_expectation_preserved(m, rate, x, 10000, rng);
    out.push_back({"expectation", std::string(to_string(m)) + "@" + format_metric(rate),
                   rep.max_rel_deviation, rep.bound, rep.pass});
  };
  for (double p : {0.8, 0.9}) run(DropMethod::dropout, p);
  for (double p : {0.8, 0.9}) run(DropMethod::dropfilter, p);
  for (double q : {0.2, 0.4, 0.6}) run(DropMethod::scalefilter, q);
  for (double p : {0.8, 0.9}) run(DropMethod::droppath, p);
  return out;
}

namespace detail {

inline double suite_dot(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

inline Tensor suite_random(Shape4 shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

// Central-difference checks for every layer and every drop operator with a
// frozen mask, five seeded fixtures each, bound 1e-5 at step 1e-4.
inline std::vector<SuiteCase> run_gradient_suite() {
  std::vector<SuiteCase> out;
  const double step = 1e-4;
  const double bound = 1e-5;
  auto record = [&](const std::string& name, double observed) {
    out.push_back({"gradients", name, observed, bound, observed < bound});
  };

  double conv_w = 0.0, conv_x = 0.0, conv_b = 0.0;
  double bn_x = 0.0, bn_g = 0.0;
  double lin_w = 0.0, lin_x = 0.0;
  double gap_x = 0.0, relu_x = 0.0, ce_x = 0.0, comp_x = 0.0;
  double drop_filter = 0.0, drop_out = 0.0, drop_scale = 0.0, drop_path = 0.0;

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed * 7919);
    {
      Conv2d conv(2, 3, 3, 1, 1);
      conv.init_he(rng);
      Tensor x = detail::suite_random(Shape4{2, 2, 4, 4}, rng);
      Tensor r = detail::suite_random(conv.output_shape(x.shape()), rng);
      conv.zero_grad();
      conv.forward(x, Mode::train);
      Tensor gx = conv.backward(r);
      auto loss = [&] { return detail::suite_dot(conv.forward_pure(x), r); };
      conv_w = std::max(conv_w, gradient_check(loss, conv.weight.values(), conv.wgrad.values(), step));
      conv_b = std::max(conv_b, gradient_check(loss, conv.bias, conv.bgrad, step));
      conv_x = std::max(conv_x, gradient_check(loss, x.values(), gx.values(), step));
    }
    {
      BatchNorm bn(3);
      for (auto& g : bn.gamma) g = rng.uniform(0.5, 1.5);
      Tensor x = detail::suite_random(Shape4{3, 3, 4, 4}, rng, -2.0, 2.0);
      Tensor r = detail::suite_random(x.shape(), rng);
      bn.zero_grad();
      bn.forward(x, Mode::train);
      Tensor gx = bn.backward(r);
      auto loss = [&] { return detail::suite_dot(bn.forward(x, Mode::train), r); };
      bn_x = std::max(bn_x, gradient_check(loss, x.values(), gx.values(), step));
      bn_g = std::max(bn_g, gradient_check(loss, bn.gamma, bn.ggrad, step));
    }
    {
      Linear lin(5, 3);
      lin.init_he(rng);
      Tensor x = detail::suite_random(Shape4{4, 5, 1, 1}, rng);
      Tensor r = detail::suite_random(Shape4{4, 3, 1, 1}, rng);
      lin.zero_grad();
      lin.forward(x, Mode::train);
      Tensor gx = lin.backward(r);
      auto loss = [&] { return detail::suite_dot(lin.forward(x, Mode::eval), r); };
      lin_w = std::max(lin_w, gradient_check(loss, lin.weight.values(), lin.wgrad.values(), step));
      lin_x = std::max(lin_x, gradient_check(loss, x.values(), gx.values(), step));
    }
    {
      GlobalAvgPool pool;
      Tensor x = detail::suite_random(Shape4{2, 3, 4, 4}, rng);
      Tensor r = detail::suite_random(Shape4{2, 3, 1, 1}, rng);
      pool.forward(x, Mode::train);
      Tensor gx = pool.backward(r);
      auto loss = [&] { return detail::suite_dot(global_avg_pool(x), r); };
      gap_x = std::max(gap_x, gradient_check(loss, x.values(), gx.values(), step));
    }
    {
      // Inputs bounded away from the kink by 10x the step.
      Relu act;
      Tensor x = detail::suite_random(Shape4{2, 3, 4, 4}, rng, 10.0 * step, 1.0);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (rng.bernoulli(0.5) > 0.5) x[i] = -x[i];
      Tensor r = detail::suite_random(x.shape(), rng);
      act.forward(x, Mode::train);
      Tensor gx = act.backward(r);
      auto loss = [&] { return detail::suite_dot(relu(x), r); };
      relu_x = std::max(relu_x, gradient_check(loss, x.values(), gx.values(), step));
    }
    {
      Tensor logits = detail::suite_random(Shape4{4, 6, 1, 1}, rng, -2.0, 2.0);
      std::vector<int> labels = {1, 0, 5, 3};
      auto ce = softmax_cross_entropy(logits, labels);
      auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
      ce_x = std::max(ce_x, gradient_check(loss, logits.values(), ce.grad.values(), step));
    }
    {
      Conv2d conv(2, 3, 3, 1, 1);
      BatchNorm bn(3);
      Relu act;
      conv.init_he(rng);
      Tensor x, r;
      bool clear = false;
      while (!clear) {
        x = detail::suite_random(Shape4{2, 2, 4, 4}, rng);
        r = detail::suite_random(conv.output_shape(x.shape()), rng);
        Tensor pre = bn.forward(conv.forward_pure(x), Mode::train);
        clear = true;
        for (std::size_t i = 0; i < pre.size(); ++i)
          if (std::abs(pre[i]) < 10.0 * step) clear = false;
      }
      conv.zero_grad();
      bn.zero_grad();
      act.forward(bn.forward(conv.forward(x, Mode::train), Mode::train), Mode::train);
      Tensor gx = conv.backward(bn.backward(act.backward(r)));
      auto loss = [&] {
        return detail::suite_dot(relu(bn.forward(conv.forward_pure(x), Mode::train)), r);
      };
      comp_x = std::max(comp_x, gradient_check(loss, x.values(), gx.values(), step));
    }
    {
      Tensor x = detail::suite_random(Shape4{2, 3, 3, 3}, rng, 0.5, 2.0);
      Tensor r = detail::suite_random(x.shape(), rng);
      auto frozen = [&](DropMethod m, double rate) {
        DropSpec spec;
        spec.method = m;
        spec.rate = rate;
        DropMask mask;
        switch (m) {
          case DropMethod::dropout: mask = dropout_apply(x, spec, rng, Mode::train).mask; break;
          case DropMethod::dropfilter:
            mask = dropfilter_apply(x, spec, rng, Mode::train).mask;
            break;
          case DropMethod::scalefilter:
            mask = scalefilter_apply(x, spec, rng, Mode::train).mask;
            break;
          case DropMethod::droppath:
            mask = droppath_apply({x}, spec, rng, Mode::train).masks[0];
            break;
          case DropMethod::none: break;
        }
        Tensor analytic = apply_mask(r, mask);
        auto loss = [&] { return detail::suite_dot(apply_mask(x, mask), r); };
        return gradient_check(loss, x.values(), analytic.values(), step);
      };
      drop_out = std::max(drop_out, frozen(DropMethod::dropout, 0.6));
      drop_filter = std::max(drop_filter, frozen(DropMethod::dropfilter, 0.7));
      drop_scale = std::max(drop_scale, frozen(DropMethod::scalefilter, 0.4));
      drop_path = std::max(drop_path, frozen(DropMethod::droppath, 0.5));
    }
  }

  record("conv2d.weight", conv_w);
  record("conv2d.bias", conv_b);
  record("conv2d.input", conv_x);
  record("batchnorm.input", bn_x);
  record("batchnorm.gamma", bn_g);
  record("linear.weight", lin_w);
  record("linear.input", lin_x);
  record("global_avg_pool.input", gap_x);
  record("relu.input", relu_x);
  record("softmax_ce.logits", ce_x);
  record("conv_bn_relu.input", comp_x);
  record("dropout.frozen_mask", drop_out);
  record("dropfilter.frozen_mask", drop_filter);
  record("scalefilter.frozen_mask", drop_scale);
  record("droppath.frozen_mask", drop_path);
  return out;
}

inline std::vector<SuiteCase> run_validation_suite(const std::string& which) {
  std::vector<SuiteCase> out;
  const bool all = which == "all";
  if (all || which == "masks") {
    auto cases = run_mask_suite();
    out.insert(out.end(), cases.begin(), cases.end());
  }
  if (all || which == "expectation") {
    auto cases = run_expectation_suite();
    out.insert(out.end(), cases.begin(), cases.end());
  }
  if (all || which == "gradients") {
    auto cases = run_gradient_suite();
    out.insert(out.end(), cases.begin(), cases.end());
  }
  if (out.empty()) throw ParameterError("unknown validation suite: " + which);
  return out;
}

inline std::string suite_report_csv(const std::vector<SuiteCase>& cases) {
  std::string out = "suite,case,observed,bound,pass\n";
  for (const SuiteCase& c : cases) {
    out += c.suite;
    out += ',';
    out += c.name;
    out += ',';
    out += format_metric(c.observed);
    out += ',';
    out += format_metric(c.bound);
    out += ',';
    out += c.pass ? "1" : "0";
    out += '\n';
  }
  return out;
}

}  // namespace dropkit
