#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dropkit/harness.hpp"
#include "dropkit/validate_suites.hpp"

namespace {

std::vector<double> parse_rate_list(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : dropkit::ConfigMap::split_list(s)) out.push_back(std::stod(item));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : dropkit::ConfigMap::split_list(s)) out.push_back(std::stoull(item));
  return out;
}

int cmd_train(const std::string& config_path, std::int64_t seed, const std::string& out_override) {
  dropkit::TrainConfig cfg = dropkit::load_train_config(config_path);
  const std::string out_dir = out_override.empty() ? cfg.out_dir : out_override;
  dropkit::DataPair data = dropkit::load_data(cfg.data);
  std::cerr << "dataset: " << data.train.size() << " train / " << data.test.size()
            << " test images, " << data.train.num_classes << " classes\n";
  std::vector<std::uint64_t> seeds =
      seed >= 0 ? std::vector<std::uint64_t>{static_cast<std::uint64_t>(seed)} : cfg.seeds;
  int failures = 0;
  for (std::uint64_t s : seeds) {
    dropkit::RunMetrics m = dropkit::train_run(cfg, s, data, out_dir, &std::cerr);
    if (m.failed) {
      std::cout << "seed " << s << ": FAILED (non-finite loss at epoch " << m.failed_epoch
                << ")\n";
      ++failures;
    } else {
      std::cout << "seed " << s << ": final test error "
                << dropkit::format_metric(m.final_test_error) << " after " << m.rows.size()
                << " epochs\n";
    }
  }
  std::cout << "outputs in " << out_dir << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path) {
  dropkit::TrainConfig cfg = dropkit::load_train_config(config_path);
  dropkit::DataPair data = dropkit::load_data(cfg.data);
  dropkit::Model model = dropkit::build_model(cfg.model);
  dropkit::ParamList params = model.checkpoint_params();
  dropkit::load_checkpoint(checkpoint_path, params);
  const double err = dropkit::evaluate(model, data.test, cfg.batch_size);
  std::cout << "test error " << dropkit::format_metric(err) << " over " << data.test.size()
            << " images\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& rates_arg,
              const std::string& seeds_arg, const std::string& out_dir) {
  dropkit::TrainConfig cfg = dropkit::load_train_config(config_path);
  const std::vector<double> rates = parse_rate_list(rates_arg);
  const std::vector<std::uint64_t> seeds =
      seeds_arg.empty() ? cfg.seeds : parse_seed_list(seeds_arg);
  dropkit::DataPair data = dropkit::load_data(cfg.data);
  auto table = dropkit::sweep_retain_rate(cfg, rates, seeds, data, out_dir);
  std::cout << dropkit::sweep_to_csv(table);
  return 0;
}

int cmd_aggregate(const std::string& in_dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(in_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".csv")
      files.push_back(entry.path());
  }
  if (files.empty()) {
    std::cerr << "no metrics_*.csv files in " << in_dir << "\n";
    return 1;
  }
  std::sort(files.begin(), files.end());
  std::vector<dropkit::RunMetrics> runs;
  for (const auto& path : files) runs.push_back(dropkit::metrics_from_csv_file(path.string()));
  dropkit::AggregateSummary agg = dropkit::aggregate_runs(runs);
  std::cout << "mean_test_error,std_test_error,runs,failed,single\n";
  std::cout << dropkit::format_metric(agg.mean) << ',' << dropkit::format_metric(agg.stddev) << ','
            << agg.used << ',' << agg.failed << ',' << (agg.single ? 1 : 0) << "\n";
  return 0;
}

int cmd_validate(const std::string& suite, const std::string& out_path) {
  auto cases = dropkit::run_validation_suite(suite);
  const std::string report = dropkit::suite_report_csv(cases);
  std::cout << report;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    out << report;
  }
  std::size_t failed = 0;
  for (const auto& c : cases)
    if (!c.pass) ++failed;
  if (failed > 0) {
    std::cerr << failed << " of " << cases.size() << " checks failed\n";
    return 1;
  }
  std::cerr << "all " << cases.size() << " checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dropkit: CNN training testbed for structured data-drop regularizers"};
  app.require_subcommand(1);

  std::string train_config, train_out;
  std::int64_t train_seed = -1;
  auto* train = app.add_subcommand("train", "train a model and emit metrics CSV + checkpoint");
  train->add_option("--config", train_config, "config file path")->required();
  train->add_option("--seed", train_seed, "single seed (default: every seed in the config)");
  train->add_option("--out", train_out, "output directory (default: train.out_dir)");

  std::string eval_ckpt, eval_config;
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the configured test split");
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  evalc->add_option("--config", eval_config, "config file path")->required();

  std::string sweep_config, sweep_rates, sweep_seeds, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "train over a list of retaining rates and aggregate");
  sweep->add_option("--config", sweep_config, "config file path")->required();
  sweep->add_option("--rates", sweep_rates, "comma list; rate 1 means no data drop")->required();
  sweep->add_option("--seeds", sweep_seeds, "comma list (default: seeds from the config)");
  sweep->add_option("--out", sweep_out, "output directory")->required();

  std::string agg_in;
  auto* agg = app.add_subcommand("aggregate", "summarize metrics_*.csv files in a directory");
  agg->add_option("--in", agg_in, "directory of per-run metrics CSVs")->required();

  std::string val_suite = "all", val_out;
  auto* val = app.add_subcommand("validate", "run the statistical/gradient verification suites");
  val->add_option("--suite", val_suite, "masks | expectation | gradients | all");
  val->add_option("--out", val_out, "also write the CSV report to this path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_config, train_seed, train_out);
    if (evalc->parsed()) return cmd_eval(eval_ckpt, eval_config);
    if (sweep->parsed()) return cmd_sweep(sweep_config, sweep_rates, sweep_seeds, sweep_out);
    if (agg->parsed()) return cmd_aggregate(agg_in);
    if (val->parsed()) return cmd_validate(val_suite, val_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
