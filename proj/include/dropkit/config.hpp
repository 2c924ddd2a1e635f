#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dropkit/data.hpp"
#include "dropkit/drop.hpp"
#include "dropkit/errors.hpp"
#include "dropkit/model.hpp"
#include "dropkit/optim.hpp"

namespace dropkit {

// Flat key = value text with [section] headers. '#' or ';' start a comment at
// line start or after whitespace. Keys outside any section are "top level";
// inside a section they are addressed as "section.key". Duplicate keys and,
// after assembly, unknown keys are errors.
class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text) {
    ConfigMap cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_comment(line);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        if (section.empty())
          throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (!cfg.values_.emplace(full, value).second)
        throw ConfigError("duplicate key: " + full);
    }
    return cfg;
  }

  static ConfigMap parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return to_double(key, it->second);
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return to_size(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("key " + key + ": expected true/false");
  }

  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(it->second)) out.push_back(to_size(key, item));
    return out;
  }

  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          const std::vector<std::uint64_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(it->second))
      out.push_back(static_cast<std::uint64_t>(to_size(key, item)));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<double> out;
    for (const std::string& item : split_list(it->second)) out.push_back(to_double(key, item));
    return out;
  }

  void check_all_consumed() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) throw ConfigError("unknown config key: " + key);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

 private:
  static void strip_comment(std::string& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if ((line[i] == '#' || line[i] == ';') &&
          (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
        line.erase(i);
        return;
      }
    }
  }

  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": not a number: " + s);
    }
  }

  static std::size_t to_size(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size() || v < 0) throw std::invalid_argument(s);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": not a nonnegative integer: " + s);
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

struct DataConfig {
  std::string dataset = "synthetic";  // cifar10 | cifar100 | synthetic
  std::string data_dir = ".";
  std::size_t subset_classes = 0;  // 0 = use the whole dataset
  std::size_t subset_per_class = 0;
  std::uint64_t subset_seed = 1;
  bool augment = true;
  std::size_t synthetic_classes = 10;
  std::size_t synthetic_train_per_class = 100;
  std::size_t synthetic_test_per_class = 100;
  std::uint64_t synthetic_seed = 1;
  SyntheticParams synthetic;
};

struct TrainConfig {
  ModelConfig model;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::vector<std::uint64_t> seeds = {1};
  DataConfig data;
  std::string out_dir = "runs";

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    schedule.validate();
    model.drop.validate();
  }
};

// The desk profile: a 30-epoch plain-4-8 configuration on a 10x500 CIFAR-10
// subset, milestones {15, 23} scaled from the 200-epoch recipe's 60/120/160.
inline void apply_desk_profile(TrainConfig& cfg) {
  cfg.model.family = Family::plain;
  cfg.model.n = 1;
  cfg.model.width_factor = 4;
  cfg.model.num_classes = 10;
  cfg.epochs = 30;
  cfg.batch_size = 128;
  cfg.schedule.kind = LrKind::step;
  cfg.schedule.base_lr = 0.1;
  cfg.schedule.milestones = {15, 23};
  cfg.schedule.factor = 0.2;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.seeds = {1, 2, 3};
  cfg.data.dataset = "cifar10";
  cfg.data.subset_classes = 10;
  cfg.data.subset_per_class = 500;
  cfg.data.augment = true;
}

inline TrainConfig train_config_from_map(const ConfigMap& cfg) {
  TrainConfig out;
  const std::string profile = cfg.get_string("profile", "");
  if (profile == "desk")
    apply_desk_profile(out);
  else if (!profile.empty())
    throw ConfigError("unknown profile: " + profile);

  out.model.family = family_from_string(cfg.get_string("model.family", to_string(out.model.family)));
  out.model.n = cfg.get_size("model.n", out.model.n);
  out.model.width_factor = cfg.get_size("model.width", out.model.width_factor);
  out.model.num_classes = cfg.get_size("model.num_classes", out.model.num_classes);
  out.model.drop_stem = cfg.get_bool("model.drop_stem", out.model.drop_stem);
  out.model.drop_projection = cfg.get_bool("model.drop_projection", out.model.drop_projection);

  out.model.drop.method =
      drop_method_from_string(cfg.get_string("drop.method", to_string(out.model.drop.method)));
  out.model.drop.rate = cfg.get_double("drop.rate", out.model.drop.rate);
  const std::string sched = cfg.get_string("drop.schedule", "constant");
  if (sched == "constant")
    out.model.drop.schedule = ScheduleKind::constant;
  else if (sched == "curriculum")
    out.model.drop.schedule = ScheduleKind::curriculum;
  else
    throw ConfigError("unknown drop schedule: " + sched);
  out.model.drop.start_rate = cfg.get_double("drop.start_rate", 1.0);
  out.model.drop.end_rate = cfg.get_double("drop.end_rate", out.model.drop.rate);
  const std::string gran = cfg.get_string("drop.granularity", "per_sample");
  if (gran == "per_sample")
    out.model.drop.granularity = Granularity::per_sample;
  else if (gran == "per_batch")
    out.model.drop.granularity = Granularity::per_batch;
  else
    throw ConfigError("unknown drop granularity: " + gran);

  const std::string lr_kind = cfg.get_string("optim.schedule", out.schedule.kind == LrKind::step
                                                                   ? "step"
                                                                   : "cosine");
  if (lr_kind == "step")
    out.schedule.kind = LrKind::step;
  else if (lr_kind == "cosine")
    out.schedule.kind = LrKind::cosine;
  else
    throw ConfigError("unknown lr schedule: " + lr_kind);
  out.schedule.base_lr = cfg.get_double("optim.lr", out.schedule.base_lr);
  out.schedule.milestones = cfg.get_size_list("optim.milestones", out.schedule.milestones);
  out.schedule.factor = cfg.get_double("optim.factor", out.schedule.factor);
  out.schedule.lr_min = cfg.get_double("optim.lr_min", out.schedule.lr_min);
  out.momentum = cfg.get_double("optim.momentum", out.momentum);
  out.weight_decay = cfg.get_double("optim.weight_decay", out.weight_decay);

  out.epochs = cfg.get_size("train.epochs", out.epochs);
  out.batch_size = cfg.get_size("train.batch_size", out.batch_size);
  out.seeds = cfg.get_u64_list("train.seeds", out.seeds);
  out.out_dir = cfg.get_string("train.out_dir", out.out_dir);

  out.data.dataset = cfg.get_string("data.dataset", out.data.dataset);
  out.data.data_dir = cfg.get_string("data.data_dir", out.data.data_dir);
  out.data.subset_classes = cfg.get_size("data.subset_classes", out.data.subset_classes);
  out.data.subset_per_class = cfg.get_size("data.subset_per_class", out.data.subset_per_class);
  out.data.subset_seed = cfg.get_u64_list("data.subset_seed", {out.data.subset_seed})[0];
  out.data.augment = cfg.get_bool("data.augment", out.data.augment);
  out.data.synthetic_classes = cfg.get_size("data.synthetic_classes", out.data.synthetic_classes);
  out.data.synthetic_train_per_class =
      cfg.get_size("data.synthetic_train_per_class", out.data.synthetic_train_per_class);
  out.data.synthetic_test_per_class =
      cfg.get_size("data.synthetic_test_per_class", out.data.synthetic_test_per_class);
  out.data.synthetic_seed = cfg.get_u64_list("data.synthetic_seed", {out.data.synthetic_seed})[0];
  out.data.synthetic.amplitude =
      cfg.get_double("data.synthetic_amplitude", out.data.synthetic.amplitude);
  out.data.synthetic.sigma = cfg.get_double("data.synthetic_sigma", out.data.synthetic.sigma);
  out.data.synthetic.noise_std = cfg.get_double("data.synthetic_noise", out.data.synthetic.noise_std);
  out.data.synthetic.jitter = cfg.get_double("data.synthetic_jitter", out.data.synthetic.jitter);

  cfg.check_all_consumed();

  if (const char* env_dir = std::getenv("DROPKIT_DATA_DIR"); env_dir && *env_dir)
    out.data.data_dir = env_dir;

  out.validate();
  return out;
}

inline TrainConfig load_train_config(const std::string& path) {
  return train_config_from_map(ConfigMap::parse_file(path));
}

}  // namespace dropkit
