#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dropkit/drop.hpp"
#include "dropkit/errors.hpp"
#include "dropkit/layers.hpp"
#include "dropkit/mode.hpp"
#include "dropkit/rng.hpp"
#include "dropkit/tensor.hpp"

namespace dropkit {

enum class Family { plain, resnet, wrn, two_path };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::plain: return "plain";
    case Family::resnet: return "resnet";
    case Family::wrn: return "wrn";
    case Family::two_path: return "two_path";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "plain") return Family::plain;
  if (s == "resnet") return Family::resnet;
  if (s == "wrn") return Family::wrn;
  if (s == "two_path") return Family::two_path;
  throw ConfigError("unknown model family: " + s);
}

struct ModelConfig {
  Family family = Family::plain;
  std::size_t n = 1;             // residual blocks per stage
  std::size_t width_factor = 1;  // multiplies the {16, 32, 64} stage template
  std::size_t num_classes = 10;
  std::array<std::size_t, 3> input_shape = {3, 32, 32};  // (C, H, W)
  DropSpec drop;
  bool drop_stem = true;        // "every convolutional layer" read literally
  bool drop_projection = true;  // exclusion knobs for both readings
};

// Per-step context threaded through the graph. `scheduled_rate` carries the
// epoch's effective retention rate when a schedule is in play; sites fall
// back to their configured rate otherwise. Mask streams are derived from
// (site id, epoch, step), so layer evaluation order cannot perturb them.
struct StepCtx {
  Mode mode = Mode::eval;
  std::optional<double> scheduled_rate;
  std::uint64_t epoch = 0, step = 0;
  Rng* rng = nullptr;
};

class DropSite {
 public:
  void configure(const DropSpec& spec, int id) {
    spec_ = spec;
    id_ = id;
    mask_ = DropMask{};
  }

  bool active() const { return spec_.method != DropMethod::none; }
  const DropSpec& spec() const { return spec_; }
  int id() const { return id_; }

  Tensor apply(const Tensor& x, StepCtx& ctx) {
    if (!active() || ctx.mode == Mode::eval) {
      mask_ = DropMask{};
      return x;
    }
    if (ctx.rng == nullptr) throw ParameterError("train-mode drop needs an rng in StepCtx");
    DropSpec eff = spec_.with_rate(ctx.scheduled_rate.value_or(spec_.rate));
    Rng rng = ctx.rng->split("mask", static_cast<std::uint64_t>(id_), ctx.epoch, ctx.step);
    switch (eff.method) {
      case DropMethod::dropout: {
        DropResult r = dropout_apply(x, eff, rng, Mode::train);
        mask_ = std::move(r.mask);
        return std::move(r.output);
      }
      case DropMethod::dropfilter: {
        DropResult r = dropfilter_apply(x, eff, rng, Mode::train);
        mask_ = std::move(r.mask);
        return std::move(r.output);
      }
      case DropMethod::scalefilter: {
        DropResult r = scalefilter_apply(x, eff, rng, Mode::train);
        mask_ = std::move(r.mask);
        return std::move(r.output);
      }
      case DropMethod::droppath: {
        DropPathResult r = droppath_apply({x}, eff, rng, Mode::train);
        mask_ = std::move(r.masks[0]);
        return std::move(r.outputs[0]);
      }
      case DropMethod::none: break;
    }
    return x;
  }

  Tensor backward(const Tensor& grad) const { return apply_mask(grad, mask_); }

 private:
  DropSpec spec_;
  int id_ = -1;
  DropMask mask_;
};

enum class UnitOrder { bare, preact, postact };
enum class UnitKind { stem, block, projection };

inline Tensor add_tensors(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("residual add shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

class Node {
 public:
  virtual ~Node() = default;
  virtual Tensor forward(const Tensor& x, StepCtx& ctx) = 0;
  virtual Tensor backward(const Tensor& grad) = 0;
  virtual void visit_params(ParamList& out) = 0;
  virtual void visit_state(ParamList&) {}
  virtual void zero_grad() = 0;
  virtual void init(Rng& root) = 0;
  virtual std::size_t conv_count() const { return 0; }
  virtual std::size_t weighted_layer_count() const { return 0; }
  virtual void collect_conv_sites(std::vector<std::pair<DropSite*, UnitKind>>&) {}
  virtual void collect_branch_sites(std::vector<DropSite*>&) {}
};

// One convolution with its family ordering and the drop slot on its output:
//   bare:    conv -> drop
//   preact:  bn -> relu -> conv -> drop
//   postact: conv -> bn -> relu -> drop
class ConvUnit : public Node {
 public:
  ConvUnit(std::string name, UnitOrder order, UnitKind kind, std::size_t in_ch, std::size_t out_ch,
           std::size_t kernel, std::size_t stride, std::size_t pad)
      : name_(std::move(name)), order_(order), kind_(kind), conv_(in_ch, out_ch, kernel, stride, pad) {
    if (order_ == UnitOrder::preact) bn_.emplace(in_ch);
    if (order_ == UnitOrder::postact) bn_.emplace(out_ch);
  }

  Tensor forward(const Tensor& x, StepCtx& ctx) override {
    Tensor y;
    switch (order_) {
      case UnitOrder::bare:
        y = conv_.forward(x, ctx.mode);
        break;
      case UnitOrder::preact:
        y = bn_->forward(x, ctx.mode);
        y = relu_.forward(y, ctx.mode);
        y = conv_.forward(y, ctx.mode);
        break;
      case UnitOrder::postact:
        y = conv_.forward(x, ctx.mode);
        y = bn_->forward(y, ctx.mode);
        y = relu_.forward(y, ctx.mode);
        break;
    }
    return site_.apply(y, ctx);
  }

  Tensor backward(const Tensor& grad) override {
    Tensor g = site_.backward(grad);
    switch (order_) {
      case UnitOrder::bare:
        return conv_.backward(g);
      case UnitOrder::preact:
        return bn_->backward(relu_.backward(conv_.backward(g)));
      case UnitOrder::postact:
        return conv_.backward(bn_->backward(relu_.backward(g)));
    }
    return g;
  }

  void visit_params(ParamList& out) override {
    conv_.visit_params(name_ + ".conv", out);
    if (bn_) bn_->visit_params(name_ + ".bn", out);
  }

  void visit_state(ParamList& out) override {
    if (bn_) bn_->visit_state(name_ + ".bn", out);
  }

  void zero_grad() override {
    conv_.zero_grad();
    if (bn_) bn_->zero_grad();
  }

  void init(Rng& root) override {
    Rng rng = root.split(name_);
    conv_.init_he(rng);
  }

  std::size_t conv_count() const override { return 1; }
  std::size_t weighted_layer_count() const override {
    return kind_ == UnitKind::projection ? 0 : 1;
  }
  void collect_conv_sites(std::vector<std::pair<DropSite*, UnitKind>>& out) override {
    out.emplace_back(&site_, kind_);
  }

  UnitKind kind() const { return kind_; }
  const Conv2d& conv() const { return conv_; }

 private:
  std::string name_;
  UnitOrder order_;
  UnitKind kind_;
  Conv2d conv_;
  std::optional<BatchNorm> bn_;
  Relu relu_;
  DropSite site_;
};

// Pre-activation residual block: (bn-relu-conv) x2 on the branch, identity
// or 1x1 stride-matched projection on the shortcut. Under droppath the whole
// branch is the drop unit; the shortcut is never droppable.
class ResidualBlock : public Node {
 public:
  ResidualBlock(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t stride)
      : unit1_(name + ".conv1", UnitOrder::preact, UnitKind::block, in_ch, out_ch, 3, stride, 1),
        unit2_(name + ".conv2", UnitOrder::preact, UnitKind::block, out_ch, out_ch, 3, 1, 1) {
    if (in_ch != out_ch || stride != 1)
      projection_.emplace(name + ".proj", UnitOrder::bare, UnitKind::projection, in_ch, out_ch, 1,
                          stride, 0);
  }

  Tensor forward(const Tensor& x, StepCtx& ctx) override {
    Tensor branch = unit2_.forward(unit1_.forward(x, ctx), ctx);
    branch = branch_site_.apply(branch, ctx);
    Tensor shortcut = projection_ ? projection_->forward(x, ctx) : x;
    return add_tensors(branch, shortcut);
  }

  Tensor backward(const Tensor& grad) override {
    Tensor gb = branch_site_.backward(grad);
    gb = unit1_.backward(unit2_.backward(gb));
    Tensor gs = projection_ ? projection_->backward(grad) : grad;
    return add_tensors(gb, gs);
  }

  void visit_params(ParamList& out) override {
    unit1_.visit_params(out);
    unit2_.visit_params(out);
    if (projection_) projection_->visit_params(out);
  }

  void visit_state(ParamList& out) override {
    unit1_.visit_state(out);
    unit2_.visit_state(out);
    if (projection_) projection_->visit_state(out);
  }

  void zero_grad() override {
    unit1_.zero_grad();
    unit2_.zero_grad();
    if (projection_) projection_->zero_grad();
  }

  void init(Rng& root) override {
    unit1_.init(root);
    unit2_.init(root);
    if (projection_) projection_->init(root);
  }

  std::size_t conv_count() const override { return 2 + (projection_ ? 1 : 0); }
  std::size_t weighted_layer_count() const override { return 2; }

  void collect_conv_sites(std::vector<std::pair<DropSite*, UnitKind>>& out) override {
    unit1_.collect_conv_sites(out);
    unit2_.collect_conv_sites(out);
    if (projection_) projection_->collect_conv_sites(out);
  }

  void collect_branch_sites(std::vector<DropSite*>& out) override {
    out.push_back(&branch_site_);
  }

  bool has_projection() const { return projection_.has_value(); }

 private:
  ConvUnit unit1_, unit2_;
  std::optional<ConvUnit> projection_;
  DropSite branch_site_;
};

class BnReluNode : public Node {
 public:
  BnReluNode(std::string name, std::size_t channels) : name_(std::move(name)), bn_(channels) {}

  Tensor forward(const Tensor& x, StepCtx& ctx) override {
    return relu_.forward(bn_.forward(x, ctx.mode), ctx.mode);
  }
  Tensor backward(const Tensor& grad) override { return bn_.backward(relu_.backward(grad)); }
  void visit_params(ParamList& out) override { bn_.visit_params(name_, out); }
  void visit_state(ParamList& out) override { bn_.visit_state(name_, out); }
  void zero_grad() override { bn_.zero_grad(); }
  void init(Rng&) override {}

 private:
  std::string name_;
  BatchNorm bn_;
  Relu relu_;
};

class GapNode : public Node {
 public:
  Tensor forward(const Tensor& x, StepCtx& ctx) override { return pool_.forward(x, ctx.mode); }
  Tensor backward(const Tensor& grad) override { return pool_.backward(grad); }
  void visit_params(ParamList&) override {}
  void zero_grad() override {}
  void init(Rng&) override {}

 private:
  GlobalAvgPool pool_;
};

class LinearNode : public Node {
 public:
  LinearNode(std::string name, std::size_t in_features, std::size_t out_features)
      : name_(std::move(name)), linear_(in_features, out_features) {}

  Tensor forward(const Tensor& x, StepCtx& ctx) override { return linear_.forward(x, ctx.mode); }
  Tensor backward(const Tensor& grad) override { return linear_.backward(grad); }
  void visit_params(ParamList& out) override { linear_.visit_params(name_, out); }
  void zero_grad() override { linear_.zero_grad(); }
  void init(Rng& root) override {
    Rng rng = root.split(name_);
    linear_.init_he(rng);
  }
  std::size_t weighted_layer_count() const override { return 1; }

 private:
  std::string name_;
  Linear linear_;
};

class Model {
 public:
  Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}

  Tensor forward(const Tensor& x, StepCtx& ctx) {
    Tensor y = x;
    for (auto& node : nodes_) y = node->forward(y, ctx);
    return y;
  }

  Tensor forward_eval(const Tensor& x) {
    StepCtx ctx;
    return forward(x, ctx);
  }

  Tensor backward(const Tensor& grad) {
    Tensor g = grad;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  ParamList params() {
    ParamList out;
    for (auto& node : nodes_) node->visit_params(out);
    return out;
  }

  // Learnables plus batch-norm running statistics, grouped per node in
  // model-definition order; this is the checkpoint layout.
  ParamList checkpoint_params() {
    ParamList out;
    for (auto& node : nodes_) {
      node->visit_params(out);
      node->visit_state(out);
    }
    return out;
  }

  std::size_t param_count() {
    std::size_t total = 0;
    for (const ParamRef& p : params()) total += p.count;
    return total;
  }

  void zero_grad() {
    for (auto& node : nodes_) node->zero_grad();
  }

  void init(Rng& root) {
    for (auto& node : nodes_) node->init(root);
  }

  // Registers the drop spec on every matching site and returns the number of
  // active sites: one per conv output for the conv-sited methods, one per
  // residual branch for droppath. Stem and projection convs obey their
  // exclusion knobs.
  std::size_t attach_drop(const DropSpec& spec) {
    spec.validate();
    cfg_.drop = spec;
    std::vector<std::pair<DropSite*, UnitKind>> conv_sites;
    std::vector<DropSite*> branch_sites;
    for (auto& node : nodes_) {
      node->collect_conv_sites(conv_sites);
      node->collect_branch_sites(branch_sites);
    }
    const bool conv_method = spec.method == DropMethod::dropout ||
                             spec.method == DropMethod::dropfilter ||
                             spec.method == DropMethod::scalefilter;
    if (spec.method == DropMethod::droppath && branch_sites.empty())
      throw ConfigError("droppath needs a multi-path family (resnet/wrn)");
    const DropSpec off{};
    int next_id = 0;
    std::size_t active = 0;
    for (auto& [site, kind] : conv_sites) {
      const bool enabled = conv_method && !(kind == UnitKind::stem && !cfg_.drop_stem) &&
                           !(kind == UnitKind::projection && !cfg_.drop_projection);
      site->configure(enabled ? spec : off, next_id++);
      if (enabled) ++active;
    }
    for (DropSite* site : branch_sites) {
      const bool enabled = spec.method == DropMethod::droppath;
      site->configure(enabled ? spec : off, next_id++);
      if (enabled) ++active;
    }
    return active;
  }

  const DropSpec& drop_spec() const { return cfg_.drop; }
  const ModelConfig& config() const { return cfg_; }

  std::size_t weighted_layer_count() const {
    std::size_t total = 0;
    for (const auto& node : nodes_) total += node->weighted_layer_count();
    return total;
  }

  std::size_t conv_count() const {
    std::size_t total = 0;
    for (const auto& node : nodes_) total += node->conv_count();
    return total;
  }

  std::size_t drop_site_count() {
    std::vector<std::pair<DropSite*, UnitKind>> conv_sites;
    std::vector<DropSite*> branch_sites;
    for (auto& node : nodes_) {
      node->collect_conv_sites(conv_sites);
      node->collect_branch_sites(branch_sites);
    }
    std::size_t active = 0;
    for (auto& [site, kind] : conv_sites)
      if (site->active()) ++active;
    for (DropSite* site : branch_sites)
      if (site->active()) ++active;
    return active;
  }

  std::size_t projection_count() const {
    std::size_t total = 0;
    for (const auto& node : nodes_)
      if (const auto* block = dynamic_cast<const ResidualBlock*>(node.get()))
        if (block->has_projection()) ++total;
    return total;
  }

  const std::array<std::size_t, 3>& stage_widths() const { return stage_widths_; }

  std::vector<std::unique_ptr<Node>>& nodes() { return nodes_; }

  void set_stage_widths(const std::array<std::size_t, 3>& widths) { stage_widths_ = widths; }

 private:
  ModelConfig cfg_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::array<std::size_t, 3> stage_widths_ = {0, 0, 0};
};

// Pre-activation ResNet/WRN: 3x3 stem, three stages of n residual blocks at
// widths width_factor * {16, 32, 64} with stride 2 entering stages 2 and 3,
// then bn-relu, global average pool and the classifier. Weighted depth is
// 6n + 2 (projection shortcuts are not counted).
inline Model build_resnet(const ModelConfig& cfg) {
  if (cfg.family != Family::resnet && cfg.family != Family::wrn)
    throw ConfigError("build_resnet expects family resnet or wrn");
  if (cfg.n < 1) throw ConfigError("resnet needs n >= 1 blocks per stage");
  if (cfg.width_factor < 1) throw ConfigError("width_factor must be >= 1");
  Model model(cfg);
  const std::array<std::size_t, 3> widths = {16 * cfg.width_factor, 32 * cfg.width_factor,
                                             64 * cfg.width_factor};
  model.set_stage_widths(widths);
  auto& nodes = model.nodes();
  nodes.push_back(std::make_unique<ConvUnit>("stem", UnitOrder::bare, UnitKind::stem,
                                             cfg.input_shape[0], widths[0], 3, 1, 1));
  std::size_t in_ch = widths[0];
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t out_ch = widths[stage];
    for (std::size_t block = 0; block < cfg.n; ++block) {
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      const std::string name =
          "s" + std::to_string(stage + 1) + ".b" + std::to_string(block);
      nodes.push_back(std::make_unique<ResidualBlock>(name, in_ch, out_ch, stride));
      in_ch = out_ch;
    }
  }
  nodes.push_back(std::make_unique<BnReluNode>("head.bn", in_ch));
  nodes.push_back(std::make_unique<GapNode>());
  nodes.push_back(std::make_unique<LinearNode>("fc", in_ch, cfg.num_classes));
  model.attach_drop(cfg.drop);
  return model;
}

// Same template with the residual connections removed; conv-bn-relu ordering.
inline Model build_plain(const ModelConfig& cfg) {
  if (cfg.family != Family::plain) throw ConfigError("build_plain expects family plain");
  if (cfg.n < 1) throw ConfigError("plain net needs n >= 1 blocks per stage");
  if (cfg.width_factor < 1) throw ConfigError("width_factor must be >= 1");
  Model model(cfg);
  const std::array<std::size_t, 3> widths = {16 * cfg.width_factor, 32 * cfg.width_factor,
                                             64 * cfg.width_factor};
  model.set_stage_widths(widths);
  auto& nodes = model.nodes();
  nodes.push_back(std::make_unique<ConvUnit>("stem", UnitOrder::postact, UnitKind::stem,
                                             cfg.input_shape[0], widths[0], 3, 1, 1));
  std::size_t in_ch = widths[0];
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t out_ch = widths[stage];
    for (std::size_t block = 0; block < cfg.n; ++block) {
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      const std::string base =
          "s" + std::to_string(stage + 1) + ".b" + std::to_string(block);
      nodes.push_back(std::make_unique<ConvUnit>(base + ".conv1", UnitOrder::postact,
                                                 UnitKind::block, in_ch, out_ch, 3, stride, 1));
      nodes.push_back(std::make_unique<ConvUnit>(base + ".conv2", UnitOrder::postact,
                                                 UnitKind::block, out_ch, out_ch, 3, 1, 1));
      in_ch = out_ch;
    }
  }
  nodes.push_back(std::make_unique<GapNode>());
  nodes.push_back(std::make_unique<LinearNode>("fc", in_ch, cfg.num_classes));
  model.attach_drop(cfg.drop);
  return model;
}

inline Model build_model(const ModelConfig& cfg) {
  switch (cfg.family) {
    case Family::plain: return build_plain(cfg);
    case Family::resnet:
    case Family::wrn: return build_resnet(cfg);
    case Family::two_path:
      throw ConfigError("two_path is an equivalence fixture; use build_two_path");
  }
  throw ConfigError("unknown family");
}

// One convolutional layer and its multi-path reconstruction: each filter is
// a path convolving the shared input, the path outputs are concatenated.
// Both routes read the same weight storage, so their outputs must agree, and
// per-path drop masks must reproduce per-channel dropfilter masks.
class TwoPathFixture {
 public:
  TwoPathFixture(std::size_t in_channels, std::size_t paths, std::size_t kernel, std::size_t pad)
      : conv_(in_channels, paths, kernel, 1, pad) {}

  void init(Rng& rng) { conv_.init_he(rng); }

  std::size_t paths() const { return conv_.out_channels(); }
  Conv2d& conv() { return conv_; }

  Tensor forward_single(const Tensor& x) const { return conv_.forward_pure(x); }

  Tensor forward_paths(const Tensor& x) const {
    const std::size_t c = conv_.out_channels();
    Tensor out;
    for (std::size_t i = 0; i < c; ++i) {
      Tensor slice = path_forward(x, i);
      if (i == 0) {
        out = Tensor(Shape4{slice.shape().n, c, slice.shape().h, slice.shape().w});
      }
      for (std::size_t n = 0; n < slice.shape().n; ++n)
        for (std::size_t h = 0; h < slice.shape().h; ++h)
          for (std::size_t w = 0; w < slice.shape().w; ++w)
            out(n, i, h, w) = slice(n, 0, h, w);
    }
    return out;
  }

  // DropFilter route: channel mask bits (N, paths, 1, 1) on the single-layer
  // output.
  Tensor forward_single_masked(const Tensor& x, const Tensor& bits, double p) const {
    return dropfilter_apply_masked(forward_single(x), bits, p);
  }

  // DropPath route: the same bits read per path, each path masked as a branch
  // before concatenation.
  Tensor forward_paths_masked(const Tensor& x, const Tensor& bits, double p) const {
    const std::size_t c = conv_.out_channels();
    Tensor out;
    for (std::size_t i = 0; i < c; ++i) {
      Tensor slice = path_forward(x, i);
      Tensor branch_bits(Shape4{slice.shape().n, 1, 1, 1});
      for (std::size_t n = 0; n < slice.shape().n; ++n)
        branch_bits(n, 0, 0, 0) = bits(n, i, 0, 0);
      Tensor masked = droppath_apply_masked(slice, branch_bits, p);
      if (i == 0) {
        out = Tensor(Shape4{masked.shape().n, c, masked.shape().h, masked.shape().w});
      }
      for (std::size_t n = 0; n < masked.shape().n; ++n)
        for (std::size_t h = 0; h < masked.shape().h; ++h)
          for (std::size_t w = 0; w < masked.shape().w; ++w)
            out(n, i, h, w) = masked(n, 0, h, w);
    }
    return out;
  }

 private:
  // Path i is a single-filter conv sharing the filter's weight slice.
  Tensor path_forward(const Tensor& x, std::size_t i) const {
    Conv2d path(conv_.in_channels(), 1, conv_.kernel(), conv_.stride(), conv_.pad());
    const std::size_t per_filter = conv_.in_channels() * conv_.kernel() * conv_.kernel();
    for (std::size_t j = 0; j < per_filter; ++j) path.weight[j] = conv_.weight[i * per_filter + j];
    path.bias[0] = conv_.bias[i];
    return path.forward_pure(x);
  }

  Conv2d conv_;
};

inline TwoPathFixture build_two_path(const ModelConfig& cfg) {
  if (cfg.family != Family::two_path) throw ConfigError("build_two_path expects family two_path");
  return TwoPathFixture(cfg.input_shape[0], 16 * cfg.width_factor, 3, 1);
}

}  // namespace dropkit
