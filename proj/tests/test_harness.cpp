#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dropkit/harness.hpp"

using namespace dropkit;

namespace {

// Small synthetic setup that trains in seconds.
TrainConfig tiny_config(std::size_t epochs, DropMethod method = DropMethod::none,
                        double rate = 1.0) {
  TrainConfig cfg;
  cfg.model.family = Family::plain;
  cfg.model.n = 1;
  cfg.model.width_factor = 1;
  cfg.model.num_classes = 3;
  cfg.model.drop.method = method;
  cfg.model.drop.rate = rate;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.schedule.base_lr = 0.05;
  cfg.schedule.milestones = {};
  cfg.weight_decay = 0.0005;
  cfg.data.dataset = "synthetic";
  cfg.data.synthetic_classes = 3;
  cfg.data.synthetic_train_per_class = 150;
  cfg.data.synthetic_test_per_class = 60;
  cfg.data.synthetic_seed = 11;
  cfg.data.augment = false;
  cfg.seeds = {1};
  return cfg;
}

}  // namespace

TEST_CASE("load_data builds distinct train and test splits with shared means") {
  TrainConfig cfg = tiny_config(1);
  DataPair data = load_data(cfg.data);
  CHECK(data.train.size() == 450);
  CHECK(data.test.size() == 180);
  CHECK_FALSE(data.train.images.same_bits(data.test.images));
  CHECK(data.train.channel_means == data.test.channel_means);
  CHECK(data.train.channel_means[0] != 0.0);
}

TEST_CASE("load_data subsets share the class selection across splits") {
  TrainConfig cfg = tiny_config(1);
  cfg.data.synthetic_classes = 6;
  cfg.data.subset_classes = 2;
  cfg.data.subset_per_class = 40;
  cfg.data.subset_seed = 5;
  DataPair data = load_data(cfg.data);
  CHECK(data.train.size() == 80);
  CHECK(data.train.num_classes == 2);
  CHECK(data.test.num_classes == 2);
  CHECK(data.test.size() == 120);  // all test examples of the two classes
  DataPair again = load_data(cfg.data);
  CHECK(again.train.images.same_bits(data.train.images));
  CHECK(again.test.labels == data.test.labels);
}

TEST_CASE("load_data rejects unknown datasets and missing files") {
  DataConfig dc;
  dc.dataset = "imagenet";
  CHECK_THROWS_AS(load_data(dc), ConfigError);
  dc.dataset = "cifar10";
  dc.data_dir = "/nonexistent";
  CHECK_THROWS_AS(load_data(dc), FormatError);
}

TEST_CASE("a one-epoch run yields one finite metrics row") {
  TrainConfig cfg = tiny_config(1);
  DataPair data = load_data(cfg.data);
  RunMetrics m = train_run(cfg, 1, data);
  REQUIRE(m.rows.size() == 1);
  CHECK_FALSE(m.failed);
  CHECK(std::isfinite(m.rows[0].train_loss));
  CHECK(m.rows[0].epoch == 0);
  CHECK(m.rows[0].lr == 0.05);
  CHECK(m.rows[0].retain_rate == 1.0);
  CHECK(m.final_test_error == m.rows[0].test_error);
}

TEST_CASE("identical config and seed reproduce byte-identical CSV") {
  TrainConfig cfg = tiny_config(2, DropMethod::dropfilter, 0.9);
  cfg.data.augment = true;  // exercise the augmentation stream too
  DataPair data = load_data(cfg.data);
  RunMetrics a = train_run(cfg, 42, data);
  RunMetrics b = train_run(cfg, 42, data);
  CHECK(metrics_to_csv(a) == metrics_to_csv(b));
  RunMetrics c = train_run(cfg, 43, data);
  CHECK(metrics_to_csv(c) != metrics_to_csv(a));
}

TEST_CASE("metrics CSV round-trips through the parser") {
  TrainConfig cfg = tiny_config(2);
  DataPair data = load_data(cfg.data);
  RunMetrics m = train_run(cfg, 9, data);
  RunMetrics parsed = metrics_from_csv(metrics_to_csv(m));
  REQUIRE(parsed.rows.size() == m.rows.size());
  CHECK_FALSE(parsed.failed);
  CHECK(parsed.final_test_error == Catch::Approx(m.final_test_error).margin(1e-5));
  CHECK_THROWS_AS(metrics_from_csv("bad,header\n"), FormatError);
}

TEST_CASE("lr and retain-rate columns follow their schedules exactly") {
  TrainConfig cfg = tiny_config(4, DropMethod::dropfilter, 0.9);
  cfg.schedule.milestones = {2, 3};
  cfg.model.drop.schedule = ScheduleKind::curriculum;
  cfg.model.drop.start_rate = 1.0;
  cfg.model.drop.end_rate = 0.6;
  DataPair data = load_data(cfg.data);
  RunMetrics m = train_run(cfg, 3, data);
  REQUIRE(m.rows.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(m.rows[e].lr == schedule_lr(cfg.schedule, e, 4));
    CHECK(m.rows[e].retain_rate == retention_schedule(cfg.model.drop, e, 4));
  }
}

TEST_CASE("a diverging run is marked failed at its epoch") {
  TrainConfig cfg = tiny_config(3);
  cfg.schedule.base_lr = 1e18;
  DataPair data = load_data(cfg.data);
  RunMetrics m = train_run(cfg, 1, data);
  CHECK(m.failed);
  CHECK(m.failed_epoch < 3);
  CHECK(m.rows.size() <= 3);
  CHECK_FALSE(std::isfinite(m.rows.back().train_loss));
  RunMetrics parsed = metrics_from_csv(metrics_to_csv(m));
  CHECK(parsed.failed);
}

TEST_CASE("an untrained zero-weight model predicts the first class") {
  ModelConfig mc;
  mc.family = Family::plain;
  mc.n = 1;
  mc.width_factor = 1;
  mc.num_classes = 10;
  Model model = build_plain(mc);  // weights all zero: logits tie, argmax -> 0
  Dataset ds = synthetic_dataset(10, 20, 3);
  ds.channel_means = compute_channel_means(ds);
  const double err = evaluate(model, ds);
  CHECK(err == Catch::Approx(0.9));
  Dataset empty;
  empty.images = Tensor(Shape4{0, 3, 32, 32});
  CHECK_THROWS_AS(evaluate(model, empty), DataError);
}

TEST_CASE("evaluate is invariant to the attached drop spec") {
  TrainConfig cfg = tiny_config(1);
  DataPair data = load_data(cfg.data);
  Rng rng(21);
  Model model = build_model(cfg.model);
  model.init(rng);
  const double base = evaluate(model, data.test);
  for (DropMethod m : {DropMethod::dropout, DropMethod::dropfilter, DropMethod::scalefilter}) {
    DropSpec spec;
    spec.method = m;
    spec.rate = 0.5;
    model.attach_drop(spec);
    CHECK(evaluate(model, data.test) == base);
  }
}

TEST_CASE("aggregate_runs mean and sample deviation") {
  auto with_final = [](double v) {
    RunMetrics m;
    m.rows.push_back({0, 0.1, 0.1, v, 0.1, 1.0});
    m.final_test_error = v;
    return m;
  };
  AggregateSummary equal = aggregate_runs({with_final(0.06), with_final(0.06), with_final(0.06)});
  CHECK(equal.mean == Catch::Approx(0.06));
  CHECK(equal.stddev == 0.0);
  CHECK(equal.used == 3);

  AggregateSummary pair = aggregate_runs({with_final(0.05), with_final(0.07)});
  CHECK(pair.mean == Catch::Approx(0.06));
  CHECK(pair.stddev == Catch::Approx(0.014142135623730951).epsilon(1e-12));

  AggregateSummary single = aggregate_runs({with_final(0.25)});
  CHECK(single.mean == Catch::Approx(0.25));
  CHECK(single.stddev == 0.0);
  CHECK(single.single);

  RunMetrics bad;
  bad.failed = true;
  AggregateSummary mixed = aggregate_runs({with_final(0.1), bad});
  CHECK(mixed.used == 1);
  CHECK(mixed.failed == 1);
}

TEST_CASE("rate sweep: counting, identity cell, determinism") {
  TrainConfig cfg = tiny_config(1, DropMethod::dropfilter, 0.9);
  DataPair data = load_data(cfg.data);
  auto table = sweep_retain_rate(cfg, {0.8, 0.9, 1.0}, {1, 2}, data);
  REQUIRE(table.size() == 3);
  for (const SweepCell& cell : table) CHECK(cell.summary.used == 2);

  // The rate-1 cell is the drop-free baseline run, bit for bit.
  TrainConfig none_cfg = cfg;
  none_cfg.model.drop.method = DropMethod::none;
  RunMetrics baseline = train_run(none_cfg, 1, data);
  auto solo = sweep_retain_rate(cfg, {1.0}, {1}, data);
  CHECK(solo[0].summary.mean == baseline.final_test_error);
  CHECK(solo[0].summary.single);

  CHECK_THROWS_AS(sweep_retain_rate(cfg, {}, {1}, data), ParameterError);
}

TEST_CASE("synthetic benchmark: a small net clears 90% within five epochs") {
  TrainConfig cfg = tiny_config(5);
  DataPair data = load_data(cfg.data);
  RunMetrics m = train_run(cfg, 1, data);
  REQUIRE_FALSE(m.failed);
  CHECK(m.final_test_error < 0.1);
}
