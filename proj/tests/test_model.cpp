#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>

#include "dropkit/checkpoint.hpp"
#include "dropkit/model.hpp"
#include "dropkit/validate.hpp"
#include "helpers.hpp"

using namespace dropkit;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

ModelConfig resnet_cfg(std::size_t n, std::size_t width) {
  ModelConfig cfg;
  cfg.family = width > 1 ? Family::wrn : Family::resnet;
  cfg.n = n;
  cfg.width_factor = width;
  return cfg;
}

ModelConfig plain_cfg(std::size_t n, std::size_t width) {
  ModelConfig cfg;
  cfg.family = Family::plain;
  cfg.n = n;
  cfg.width_factor = width;
  return cfg;
}

DropSpec spec_of(DropMethod m, double rate) {
  DropSpec s;
  s.method = m;
  s.rate = rate;
  return s;
}

}  // namespace

TEST_CASE("resnet depth audit: 6n + 2 weighted layers") {
  for (std::size_t n = 1; n <= 18; ++n) {
    Model model = build_resnet(resnet_cfg(n, 1));
    CHECK(model.weighted_layer_count() == 6 * n + 2);
  }
  CHECK(build_resnet(resnet_cfg(9, 1)).weighted_layer_count() == 56);
  CHECK(build_resnet(resnet_cfg(18, 1)).weighted_layer_count() == 110);
}

TEST_CASE("wrn-4-20 stage widths") {
  Model model = build_resnet(resnet_cfg(3, 4));
  CHECK(model.weighted_layer_count() == 20);
  CHECK(model.stage_widths() == std::array<std::size_t, 3>{64, 128, 256});
}

TEST_CASE("plain nets drop the shortcuts but keep the template") {
  Model p48 = build_plain(plain_cfg(1, 4));
  CHECK(p48.weighted_layer_count() == 8);
  CHECK(p48.projection_count() == 0);
  CHECK(p48.conv_count() == 7);

  Model p814 = build_plain(plain_cfg(2, 8));
  CHECK(p814.weighted_layer_count() == 14);
  CHECK(p814.stage_widths() == std::array<std::size_t, 3>{128, 256, 512});
}

TEST_CASE("plain parameter count equals resnet minus projections") {
  for (std::size_t n : {1, 2}) {
    for (std::size_t w : {1, 2}) {
      Model res = build_resnet(resnet_cfg(n, w));
      ModelConfig pc = plain_cfg(n, w);
      Model plain = build_plain(pc);
      const std::size_t proj_params =
          (16 * w * 32 * w + 32 * w) + (32 * w * 64 * w + 64 * w);  // two 1x1 projections
      CHECK(plain.param_count() == res.param_count() - proj_params);
      CHECK(res.projection_count() == 2);
    }
  }
}

TEST_CASE("config errors for bad templates") {
  ModelConfig bad = resnet_cfg(0, 1);
  CHECK_THROWS_AS(build_resnet(bad), ConfigError);
  ModelConfig wrong = plain_cfg(1, 1);
  CHECK_THROWS_AS(build_resnet(wrong), ConfigError);
}

TEST_CASE("attach_drop counts conv sites") {
  SECTION("resnet-56 with stem and projections included") {
    Model model = build_resnet(resnet_cfg(9, 1));
    CHECK(model.attach_drop(spec_of(DropMethod::dropfilter, 0.9)) == 57);
    CHECK(model.drop_site_count() == 57);
  }
  SECTION("resnet-56 with projections excluded matches the 6n+2 reading") {
    ModelConfig cfg = resnet_cfg(9, 1);
    cfg.drop_projection = false;
    Model model = build_resnet(cfg);
    CHECK(model.attach_drop(spec_of(DropMethod::dropfilter, 0.9)) == 55);
  }
  SECTION("method none attaches nothing") {
    Model model = build_resnet(resnet_cfg(9, 1));
    CHECK(model.attach_drop(spec_of(DropMethod::none, 1.0)) == 0);
    CHECK(model.drop_site_count() == 0);
  }
  SECTION("plain-4-8 has seven conv sites") {
    Model model = build_plain(plain_cfg(1, 4));
    CHECK(model.attach_drop(spec_of(DropMethod::dropout, 0.9)) == 7);
  }
  SECTION("droppath attaches per residual branch") {
    Model model = build_resnet(resnet_cfg(3, 1));
    CHECK(model.attach_drop(spec_of(DropMethod::droppath, 0.9)) == 9);
    Model plain = build_plain(plain_cfg(1, 1));
    CHECK_THROWS_AS(plain.attach_drop(spec_of(DropMethod::droppath, 0.9)), ConfigError);
  }
}

TEST_CASE("32x32 inputs come out as class logits, stages halve the extent") {
  Rng rng(7);
  for (auto family_cfg : {resnet_cfg(1, 1), plain_cfg(1, 1)}) {
    Model model = build_model(family_cfg);
    model.init(rng);
    Tensor x = random_tensor(Shape4{2, 3, 32, 32}, rng);
    StepCtx ctx;
    Tensor y = model.forward(x, ctx);
    CHECK(y.shape() == Shape4{2, 10, 1, 1});
  }
  // A stride-2 block halves the spatial extent.
  ResidualBlock block("b", 16, 32, 2);
  Rng brng(9);
  block.init(brng);
  StepCtx ctx;
  ctx.mode = Mode::eval;
  Tensor x = random_tensor(Shape4{1, 16, 32, 32}, brng);
  CHECK(block.forward(x, ctx).shape() == Shape4{1, 32, 16, 16});
}

TEST_CASE("eval-mode forward is invariant to the attached drop spec") {
  Rng rng(123);
  Model model = build_resnet(resnet_cfg(1, 1));
  model.init(rng);
  Tensor x = random_tensor(Shape4{2, 3, 16, 16}, rng);
  Tensor baseline = model.forward_eval(x);
  for (DropMethod m : {DropMethod::dropout, DropMethod::dropfilter, DropMethod::scalefilter,
                       DropMethod::droppath}) {
    model.attach_drop(spec_of(m, 0.5));
    CHECK(model.forward_eval(x).same_bits(baseline));
  }
  model.attach_drop(spec_of(DropMethod::none, 1.0));
  CHECK(model.forward_eval(x).same_bits(baseline));
}

TEST_CASE("train-mode masks are keyed by site, epoch and step") {
  Rng rng(321);
  Model model = build_plain(plain_cfg(1, 1));
  model.init(rng);
  model.attach_drop(spec_of(DropMethod::dropfilter, 0.5));
  Tensor x = random_tensor(Shape4{2, 3, 8, 8}, rng);
  Rng mask_rng(999);
  StepCtx a{Mode::train, std::nullopt, 3, 14, &mask_rng};
  Tensor ya = model.forward(x, a);
  Rng mask_rng2(999);
  StepCtx b{Mode::train, std::nullopt, 3, 14, &mask_rng2};
  Tensor yb = model.forward(x, b);
  CHECK(ya.same_bits(yb));
  StepCtx c{Mode::train, std::nullopt, 3, 15, &mask_rng2};
  Tensor yc = model.forward(x, c);
  CHECK_FALSE(yc.same_bits(ya));
}

TEST_CASE("model gradients survive a full graph check") {
  Rng rng(2025);
  Model model = build_plain(plain_cfg(1, 1));
  model.init(rng);
  model.attach_drop(spec_of(DropMethod::dropfilter, 0.8));
  Tensor x = random_tensor(Shape4{2, 3, 8, 8}, rng);
  std::vector<int> labels = {1, 7};
  Rng mask_rng(555);
  StepCtx ctx{Mode::train, std::nullopt, 0, 0, &mask_rng};

  model.zero_grad();
  Tensor logits = model.forward(x, ctx);
  auto ce = softmax_cross_entropy(logits, labels);
  Tensor gx = model.backward(ce.grad);

  // The ctx keying redraws the same masks every forward, so the loss is a
  // deterministic function and central differences are valid.
  auto loss = [&] {
    StepCtx c2{Mode::train, std::nullopt, 0, 0, &mask_rng};
    return softmax_cross_entropy(model.forward(x, c2), labels).loss;
  };
  CHECK(gradient_check(loss, x.values(), gx.values(), 1e-4) < 1e-5);
}

TEST_CASE("checkpoint round-trips parameters and running statistics") {
  Rng rng(31);
  Model model = build_resnet(resnet_cfg(1, 1));
  model.init(rng);
  // Push the batch-norm running stats away from their defaults first.
  Tensor warm = random_tensor(Shape4{4, 3, 16, 16}, rng);
  Rng mask_rng(1);
  StepCtx train_ctx{Mode::train, std::nullopt, 0, 0, &mask_rng};
  model.forward(warm, train_ctx);

  const std::string path = (std::filesystem::temp_directory_path() / "dropkit_ckpt_test.bin").string();
  save_checkpoint(path, model.checkpoint_params());

  Model other = build_resnet(resnet_cfg(1, 1));
  ParamList other_params = other.checkpoint_params();
  load_checkpoint(path, other_params);
  Rng probe(77);
  Tensor x = random_tensor(Shape4{2, 3, 16, 16}, probe);
  CHECK(other.forward_eval(x).same_bits(model.forward_eval(x)));

  Model mismatched = build_resnet(resnet_cfg(2, 1));
  ParamList wrong = mismatched.checkpoint_params();
  CHECK_THROWS_AS(load_checkpoint(path, wrong), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("two-path concat equals the single conv layer") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    TwoPathFixture fixture(3, 8, 3, 1);
    fixture.init(rng);
    Tensor x = random_tensor(Shape4{2, 3, 6, 6}, rng);
    Tensor single = fixture.forward_single(x);
    Tensor paths = fixture.forward_paths(x);
    CHECK(max_abs_diff(single, paths) < 1e-12);
  }
}

TEST_CASE("a single path is trivially the single conv") {
  Rng rng(5);
  TwoPathFixture fixture(3, 1, 3, 1);
  fixture.init(rng);
  Tensor x = random_tensor(Shape4{1, 3, 5, 5}, rng);
  CHECK(fixture.forward_paths(x).same_bits(fixture.forward_single(x)));
}

TEST_CASE("per-path droppath masks equal per-channel dropfilter masks") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 7);
    TwoPathFixture fixture(3, 8, 3, 1);
    fixture.init(rng);
    Tensor x = random_tensor(Shape4{2, 3, 6, 6}, rng);
    Tensor bits(Shape4{2, 8, 1, 1});
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = rng.bernoulli(0.5);
    Tensor filter_route = fixture.forward_single_masked(x, bits, 0.5);
    Tensor path_route = fixture.forward_paths_masked(x, bits, 0.5);
    CHECK(max_abs_diff(filter_route, path_route) < 1e-12);
  }
}

TEST_CASE("build_two_path sizes paths from the width factor") {
  ModelConfig cfg;
  cfg.family = Family::two_path;
  cfg.width_factor = 4;
  TwoPathFixture fixture = build_two_path(cfg);
  CHECK(fixture.paths() == 64);
  ModelConfig wrong = cfg;
  wrong.family = Family::plain;
  CHECK_THROWS_AS(build_two_path(wrong), ConfigError);
}
