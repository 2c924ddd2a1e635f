#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dropkit/checkpoint.hpp"
#include "dropkit/format.hpp"
#include "dropkit/config.hpp"
#include "dropkit/data.hpp"
#include "dropkit/drop.hpp"
#include "dropkit/model.hpp"
#include "dropkit/optim.hpp"

namespace dropkit {

struct EpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  double lr = 0.0;
  double retain_rate = 1.0;
};

struct RunMetrics {
  std::vector<EpochRow> rows;
  double final_test_error = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::size_t failed_epoch = 0;
};

inline std::string metrics_to_csv(const RunMetrics& m) {
  std::string out = "epoch,train_loss,train_error,test_error,lr,retain_rate\n";
  for (const EpochRow& r : m.rows) {
    out += std::to_string(r.epoch);
    out += ',';
    out += format_metric(r.train_loss);
    out += ',';
    out += format_metric(r.train_error);
    out += ',';
    out += format_metric(r.test_error);
    out += ',';
    out += format_metric(r.lr);
    out += ',';
    out += format_metric(r.retain_rate);
    out += '\n';
  }
  return out;
}

inline RunMetrics metrics_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,train_error,test_error,lr,retain_rate")
    throw FormatError("bad metrics CSV header");
  RunMetrics m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    EpochRow r;
    std::getline(row, field, ',');
    r.epoch = static_cast<std::size_t>(std::stoull(field));
    std::getline(row, field, ',');
    r.train_loss = std::stod(field);
    std::getline(row, field, ',');
    r.train_error = std::stod(field);
    std::getline(row, field, ',');
    r.test_error = std::stod(field);
    std::getline(row, field, ',');
    r.lr = std::stod(field);
    if (!std::getline(row, field, ',')) throw FormatError("short metrics CSV row");
    r.retain_rate = std::stod(field);
    m.rows.push_back(r);
  }
  if (!m.rows.empty()) {
    m.final_test_error = m.rows.back().test_error;
    if (!std::isfinite(m.rows.back().train_loss)) {
      m.failed = true;
      m.failed_epoch = m.rows.back().epoch;
    }
  } else {
    m.failed = true;
  }
  return m;
}

inline RunMetrics metrics_from_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return metrics_from_csv(buf.str());
}

// Loads the configured dataset pair in raw byte scale. Subsets share one
// class selection between train and test (test keeps every example of the
// selected classes); channel means come from the final training split.
inline DataPair load_data(const DataConfig& dc) {
  DataPair pair;
  if (dc.dataset == "synthetic") {
    Rng seeder(dc.synthetic_seed);
    pair.train = synthetic_dataset(dc.synthetic_classes, dc.synthetic_train_per_class,
                                   seeder.split("train").seed(), dc.synthetic);
    pair.test = synthetic_dataset(dc.synthetic_classes, dc.synthetic_test_per_class,
                                  seeder.split("test").seed(), dc.synthetic);
  } else if (dc.dataset == "cifar10") {
    pair = load_cifar10(dc.data_dir);
  } else if (dc.dataset == "cifar100") {
    pair = load_cifar100(dc.data_dir);
  } else {
    throw ConfigError("unknown dataset: " + dc.dataset);
  }
  if (dc.subset_classes > 0) {
    Rng rng(dc.subset_seed);
    Rng srng = rng.split("subset");
    const auto classes = select_classes(pair.train.num_classes, dc.subset_classes, srng);
    pair.train = stratified_take(pair.train, classes, dc.subset_per_class, srng);
    Rng trng = rng.split("subset-test");
    pair.test = stratified_take(pair.test, classes, 0, trng);
  }
  const auto means = compute_channel_means(pair.train);
  pair.train.channel_means = means;
  pair.test.channel_means = means;
  return pair;
}

namespace detail {

inline Tensor image_slice(const Dataset& ds, std::size_t index) {
  const Shape4& s = ds.images.shape();
  Tensor img(Shape4{1, s.c, s.h, s.w});
  const std::size_t len = s.c * s.h * s.w;
  std::copy(ds.images.data() + index * len, ds.images.data() + (index + 1) * len, img.data());
  return img;
}

inline void write_normalized(Tensor& batch, std::size_t slot, const Tensor& img,
                             const std::array<double, 3>& means, bool already_normalized) {
  const Shape4& s = img.shape();
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t h = 0; h < s.h; ++h)
      for (std::size_t w = 0; w < s.w; ++w)
        batch(slot, c, h, w) = already_normalized ? img(0, c, h, w)
                                                  : (img(0, c, h, w) - means[c]) / 128.0;
}

inline std::size_t argmax_class(const Tensor& logits, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.shape().c; ++c)
    if (logits(n, c, 0, 0) > logits(n, best, 0, 0)) best = c;
  return best;
}

}  // namespace detail

// Top-1 error of the model over the dataset in eval mode.
inline double evaluate(Model& model, const Dataset& ds, std::size_t batch_size = 128) {
  if (ds.size() == 0) throw DataError("evaluate on an empty dataset");
  const Shape4& s = ds.images.shape();
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t nb = std::min(batch_size, ds.size() - start);
    Tensor batch(Shape4{nb, s.c, s.h, s.w});
    for (std::size_t i = 0; i < nb; ++i)
      detail::write_normalized(batch, i, detail::image_slice(ds, start + i), ds.channel_means,
                               ds.normalized);
    Tensor logits = model.forward_eval(batch);
    for (std::size_t i = 0; i < nb; ++i)
      if (detail::argmax_class(logits, i) != static_cast<std::size_t>(ds.labels[start + i]))
        ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

// One full training run. Everything stochastic is keyed off `seed`: weight
// init, epoch shuffles, per-(epoch, index) augmentation draws, per-(site,
// epoch, step) drop masks. A non-finite batch loss marks the run failed at
// that epoch and stops it; the poisoned row is recorded in-band.
inline RunMetrics train_run(const TrainConfig& cfg, std::uint64_t seed, const DataPair& data,
                            const std::string& out_dir = "", std::ostream* log = nullptr) {
  cfg.validate();
  if (data.train.size() == 0) throw DataError("empty training split");
  Rng root(seed);
  Model model = build_model(cfg.model);
  Rng init_rng = root.split("init");
  model.init(init_rng);
  ParamList params = model.params();
  Sgd opt(cfg.momentum, cfg.weight_decay);
  Rng mask_root = root.split("masks");
  AugmentPolicy policy;
  policy.enabled = cfg.data.augment;
  const DropSpec& drop = cfg.model.drop;
  const Shape4& s = data.train.images.shape();

  RunMetrics metrics;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_lr(cfg.schedule, epoch, cfg.epochs);
    const double retain =
        drop.method == DropMethod::none ? 1.0 : retention_schedule(drop, epoch, cfg.epochs);

    Rng shuffle_rng = root.split("shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    double loss_sum = 0.0;
    std::size_t wrong = 0;
    std::uint64_t step = 0;
    bool exploded = false;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
      Tensor batch(Shape4{nb, s.c, s.h, s.w});
      std::vector<int> labels(nb);
      for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t idx = order[start + i];
        labels[i] = data.train.labels[idx];
        Tensor img = detail::image_slice(data.train, idx);
        if (policy.enabled) {
          Rng arng = root.split("augment", epoch, idx);
          img = augment(img, policy, arng);
        }
        detail::write_normalized(batch, i, img, data.train.channel_means, data.train.normalized);
      }

      StepCtx ctx{Mode::train, retain, epoch, step, &mask_root};
      model.zero_grad();
      Tensor logits = model.forward(batch, ctx);
      CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(ce.loss)) {
        metrics.failed = true;
        metrics.failed_epoch = epoch;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        metrics.rows.push_back({epoch, nan, nan, nan, lr, retain});
        exploded = true;
        break;
      }
      loss_sum += ce.loss * static_cast<double>(nb);
      for (std::size_t i = 0; i < nb; ++i)
        if (detail::argmax_class(logits, i) != static_cast<std::size_t>(labels[i])) ++wrong;
      model.backward(ce.grad);
      opt.step(params, lr);
    }
    if (exploded) break;

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    row.train_error = static_cast<double>(wrong) / static_cast<double>(order.size());
    row.test_error = evaluate(model, data.test, cfg.batch_size);
    row.lr = lr;
    row.retain_rate = retain;
    metrics.rows.push_back(row);
    if (log)
      *log << "seed " << seed << " epoch " << epoch << ": loss " << format_metric(row.train_loss)
           << " train_err " << format_metric(row.train_error) << " test_err "
           << format_metric(row.test_error) << " lr " << format_metric(lr) << " retain "
           << format_metric(retain) << "\n";
  }

  if (!metrics.failed && !metrics.rows.empty()) metrics.final_test_error = metrics.rows.back().test_error;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::string base = out_dir + "/metrics_seed" + std::to_string(seed) + ".csv";
    std::ofstream csv(base, std::ios::trunc);
    if (!csv) throw FormatError("cannot write metrics CSV: " + base);
    csv << metrics_to_csv(metrics);
    if (!metrics.failed)
      save_checkpoint(out_dir + "/model_seed" + std::to_string(seed) + ".ckpt",
                      model.checkpoint_params());
  }
  return metrics;
}

struct AggregateSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = 0.0;
  std::size_t used = 0;
  std::size_t failed = 0;
  bool single = false;  // stddev undefined, reported as 0
};

// Mean and sample standard deviation of final test errors; failed runs are
// excluded and counted.
inline AggregateSummary aggregate_runs(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw ParameterError("aggregate_runs needs at least one run");
  AggregateSummary out;
  std::vector<double> finals;
  for (const RunMetrics& m : runs) {
    if (m.failed)
      ++out.failed;
    else
      finals.push_back(m.final_test_error);
  }
  out.used = finals.size();
  if (finals.empty()) return out;
  double sum = 0.0;
  for (double v : finals) sum += v;
  out.mean = sum / static_cast<double>(finals.size());
  if (finals.size() == 1) {
    out.single = true;
    out.stddev = 0.0;
    return out;
  }
  double ss = 0.0;
  for (double v : finals) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(finals.size() - 1));
  return out;
}

struct SweepCell {
  double rate = 1.0;
  AggregateSummary summary;
};

inline std::string sweep_to_csv(const std::vector<SweepCell>& table) {
  std::string out = "rate,mean_test_error,std_test_error,runs,failed\n";
  for (const SweepCell& cell : table) {
    out += format_metric(cell.rate);
    out += ',';
    out += format_metric(cell.summary.mean);
    out += ',';
    out += format_metric(cell.summary.stddev);
    out += ',';
    out += std::to_string(cell.summary.used);
    out += ',';
    out += std::to_string(cell.summary.failed);
    out += '\n';
  }
  return out;
}

// Rate 1 means "no data drop method": the spec's identity operator, not a
// parameter value (for scalefilter q = 1 would be maximal noise, so the
// identity mapping is used there as well).
inline TrainConfig config_for_rate(const TrainConfig& base, double rate) {
  TrainConfig cfg = base;
  if (rate == 1.0) {
    cfg.model.drop.method = DropMethod::none;
    cfg.model.drop.rate = 1.0;
  } else {
    cfg.model.drop.rate = rate;
    cfg.model.drop.schedule = ScheduleKind::constant;
  }
  return cfg;
}

inline std::string rate_dir_name(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rate_%.6g", rate);
  return buf;
}

inline std::vector<SweepCell> sweep_retain_rate(const TrainConfig& base,
                                                const std::vector<double>& rates,
                                                const std::vector<std::uint64_t>& seeds,
                                                const DataPair& data,
                                                const std::string& out_dir = "") {
  if (rates.empty()) throw ParameterError("sweep needs at least one rate");
  if (seeds.empty()) throw ParameterError("sweep needs at least one seed");
  std::vector<SweepCell> table;
  for (double rate : rates) {
    TrainConfig cfg = config_for_rate(base, rate);
    std::vector<RunMetrics> runs;
    for (std::uint64_t seed : seeds) {
      const std::string run_dir = out_dir.empty() ? "" : out_dir + "/" + rate_dir_name(rate);
      runs.push_back(train_run(cfg, seed, data, run_dir));
    }
    table.push_back({rate, aggregate_runs(runs)});
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/summary.csv", std::ios::trunc);
    csv << sweep_to_csv(table);
  }
  return table;
}

}  // namespace dropkit
