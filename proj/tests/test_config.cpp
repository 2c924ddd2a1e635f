#include <catch2/catch_amalgamated.hpp>

#include "dropkit/config.hpp"

using namespace dropkit;

namespace {

const char* kSample = R"(# experiment configuration
profile = desk

[model]
family = plain
width = 2

[drop]
method = dropfilter
rate = 0.9
granularity = per_sample

[train]
epochs = 5
seeds = 7, 8

[data]
dataset = synthetic
augment = false
)";

}  // namespace

TEST_CASE("config grammar: sections, comments, lists") {
  ConfigMap cfg = ConfigMap::parse(
      "top = 1\n"
      "[a]\n"
      "x = 2.5  # trailing comment\n"
      "list = 1, 2, 3\n"
      "; full-line comment\n"
      "name = hello\n");
  CHECK(cfg.get_size("top", 0) == 1);
  CHECK(cfg.get_double("a.x", 0.0) == 2.5);
  CHECK(cfg.get_size_list("a.list", {}) == std::vector<std::size_t>{1, 2, 3});
  CHECK(cfg.get_string("a.name", "") == "hello");
  CHECK(cfg.get_string("missing", "fallback") == "fallback");
}

TEST_CASE("config grammar rejects malformed input") {
  CHECK_THROWS_AS(ConfigMap::parse("[unterminated\nkey = 1\n"), ConfigError);
  CHECK_THROWS_AS(ConfigMap::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(ConfigMap::parse("a = 1\na = 2\n"), ConfigError);
  ConfigMap bad = ConfigMap::parse("x = notanumber\n");
  CHECK_THROWS_AS(bad.get_double("x", 0.0), ConfigError);
}

TEST_CASE("desk profile with overrides") {
  TrainConfig cfg = train_config_from_map(ConfigMap::parse(kSample));
  // Profile defaults that the file does not touch.
  CHECK(cfg.model.n == 1);
  CHECK(cfg.schedule.milestones == std::vector<std::size_t>{15, 23});
  CHECK(cfg.schedule.factor == 0.2);
  CHECK(cfg.batch_size == 128);
  CHECK(cfg.weight_decay == 0.0005);
  CHECK(cfg.data.subset_classes == 10);
  CHECK(cfg.data.subset_per_class == 500);
  // Explicit keys win over the profile.
  CHECK(cfg.model.width_factor == 2);
  CHECK(cfg.epochs == 5);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK(cfg.data.dataset == "synthetic");
  CHECK_FALSE(cfg.data.augment);
  CHECK(cfg.model.drop.method == DropMethod::dropfilter);
  CHECK(cfg.model.drop.rate == 0.9);
}

TEST_CASE("paper-scale defaults without a profile") {
  TrainConfig cfg = train_config_from_map(ConfigMap::parse(""));
  CHECK(cfg.epochs == 200);
  CHECK(cfg.batch_size == 128);
  CHECK(cfg.schedule.base_lr == 0.1);
  CHECK(cfg.schedule.milestones == std::vector<std::size_t>{60, 120, 160});
  CHECK(cfg.schedule.factor == 0.2);
  CHECK(cfg.weight_decay == 0.0005);
  CHECK(cfg.momentum == 0.9);
  CHECK(cfg.model.drop.method == DropMethod::none);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(train_config_from_map(ConfigMap::parse("[model]\ntypo_key = 3\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from_map(ConfigMap::parse("[model]\nfamily = vgg\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from_map(ConfigMap::parse("[drop]\nmethod = blockdrop\n")),
                  ConfigError);
  CHECK_THROWS_AS(train_config_from_map(ConfigMap::parse("profile = lab\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from_map(ConfigMap::parse("[train]\nepochs = 0\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from_map(ConfigMap::parse("[drop]\nrate = 1.5\n")), ParameterError);
}

TEST_CASE("curriculum drop schedule from config") {
  TrainConfig cfg = train_config_from_map(ConfigMap::parse(
      "[drop]\nmethod = dropfilter\nschedule = curriculum\nstart_rate = 1.0\nend_rate = 0.6\n"));
  CHECK(cfg.model.drop.schedule == ScheduleKind::curriculum);
  CHECK(retention_schedule(cfg.model.drop, 0, 200) == 1.0);
  CHECK(retention_schedule(cfg.model.drop, 199, 200) == Catch::Approx(0.6));
}

TEST_CASE("environment variable overrides the data directory") {
  setenv("DROPKIT_DATA_DIR", "/tmp/somewhere", 1);
  TrainConfig cfg = train_config_from_map(ConfigMap::parse("[data]\ndata_dir = ./data\n"));
  CHECK(cfg.data.data_dir == "/tmp/somewhere");
  unsetenv("DROPKIT_DATA_DIR");
  TrainConfig cfg2 = train_config_from_map(ConfigMap::parse("[data]\ndata_dir = ./data\n"));
  CHECK(cfg2.data.data_dir == "./data");
}
