// SPDX-License-Identifier: Apache-2.0
// channeldropback: train, evaluate, gradient-check and compare runs from the command line.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cdb/checkpoint.hpp"
#include "cdb/config.hpp"
#include "cdb/errors.hpp"
#include "cdb/train.hpp"

namespace fs = std::filesystem;
using namespace cdb;

namespace {

struct Common {
  std::string config_path;
  std::string out_dir = "out";
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App& cmd, Common& c) {
  cmd.add_option("--config", c.config_path, "key = value config file; flags override it");
  cmd.add_option("--out", c.out_dir, "output directory")->capture_default_str();
  for (const auto& key : config_keys()) {
    auto* slot = &c.overrides[key];
    std::string names = "--" + key;
    if (key.find('_') != std::string::npos) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      names += ",--" + dashed;
    }
    cmd.add_option(names, *slot, "config key " + key);
  }
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_path.empty()) load_config_file(cfg, c.config_path);
  for (const auto& key : config_keys()) {
    const auto& v = c.overrides.at(key);
    if (!v.empty()) {
      try {
        apply_setting(cfg, key, v);
      } catch (const Error& e) {
        throw ConfigError(std::string("--") + key + ": " + e.what());
      }
    }
  }
  cfg.train.validate();
  cfg.policy.validate();
  return cfg;
}

Network make_network(const ExperimentConfig& cfg, const Dataset& ds) {
  std::string arch = cfg.arch;
  if (arch == "auto") arch = ds.sample_shape().size() == 1 ? "mlp" : "cnn";
  Network net = build_architecture(arch, ds.sample_shape(), ds.num_classes);
  initialize_network(net, cfg.train.seed);
  return net;
}

RunOptions run_options(const ExperimentConfig& cfg) {
  RunOptions o;
  o.schedule = cfg.dropback;
  o.layer_drop_rate_override = cfg.layer_drop_rate;
  return o;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out_dir);
  return c.out_dir;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------- train

int cmd_train(const Common& c, const std::string& resume, std::size_t start_epoch) {
  const ExperimentConfig cfg = resolve(c);
  const DataSplit data = load_dataset(cfg.dataset, cfg.test_dataset, cfg.train.seed);
  Network net = resume.empty() ? make_network(cfg, data.train) : load_checkpoint(resume);
  const fs::path out = prepare_out(c);
  write_file(out / "config.txt", format_config(cfg));

  std::ofstream metrics(out / (start_epoch ? "metrics_resumed.csv" : "metrics.csv"));
  metrics << metrics_csv_header() << '\n';
  RunOptions opts = run_options(cfg);
  opts.start_epoch = start_epoch;
  opts.on_epoch = [&](const MetricsRecord& r, const Network& n) {
    metrics << metrics_csv_row(r) << '\n' << std::flush;
    save_checkpoint(n, out / "model.cdbk");
    std::printf("epoch %3zu  loss %.4f  train %.4f  test %.4f  lr %.3g  layer_drop %.3g  %.2fs\n", r.epoch,
                r.train_loss, r.train_accuracy, r.test_accuracy, r.lr, r.layer_drop_rate, r.epoch_wall_time_seconds);
  };
  run_training(cfg.train, cfg.policy, net, data.train, data.test, opts);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const Common& c, const std::string& model) {
  const ExperimentConfig cfg = resolve(c);
  const DataSplit data = load_dataset(cfg.dataset, cfg.test_dataset, cfg.train.seed);
  Network net = load_checkpoint(model);
  const Evaluation e = evaluate(net, data.test);
  std::printf("test_loss %.17g\ntest_accuracy %.17g\n", e.loss, e.accuracy);
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const Common& c, GradcheckOptions opts) {
  opts.seed = resolve(c).train.seed;
  const GradcheckReport r = gradcheck_run(opts);
  for (std::size_t i = 0; i < r.trials.size(); ++i) {
    const auto& t = r.trials[i];
    std::printf("trial %2zu  max_rel_err %.3e  params %4zu  worst %s  net %s\n", i, t.max_rel_error, t.checked,
                t.worst_param.c_str(), t.topology.c_str());
  }
  std::printf("%s: max relative error %.3e (tolerance %.1e)\n", r.passed ? "PASS" : "FAIL", r.max_rel_error,
              opts.tolerance);
  return r.passed ? 0 : 1;
}

// ---------------------------------------------------------------- compare / sweep

int cmd_compare(const Common& c, const std::string& variant_list) {
  const ExperimentConfig cfg = resolve(c);
  std::vector<Variant> variants;
  for (const auto& name : split_list(variant_list)) variants.push_back(parse_variant(name));
  if (variants.empty()) variants = all_variants();
  const DataSplit data = load_dataset(cfg.dataset, cfg.test_dataset, cfg.train.seed);
  const Network initial = make_network(cfg, data.train);
  const auto rows = compare_run(cfg.train, cfg.policy, initial, variants, data.train, data.test, cfg.dropout_keep_prob);
  const fs::path out = prepare_out(c);
  write_file(out / "config.txt", format_config(cfg));
  write_file(out / "comparison.csv", comparison_csv(rows));
  for (const auto& r : rows) {
    write_file(out / ("metrics_" + std::string(to_string(r.variant)) + ".csv"), metrics_csv(r.metrics));
    std::printf("%-18s test %.4f  epoch %.3fs\n", std::string(to_string(r.variant)).c_str(), r.final_test_accuracy,
                r.mean_epoch_time_seconds);
  }
  return 0;
}

int cmd_sweep(const Common& c, const std::string& rate_list) {
  const ExperimentConfig cfg = resolve(c);
  std::vector<double> rates;
  for (const auto& item : split_list(rate_list)) {
    ExperimentConfig scratch;
    apply_setting(scratch, "channel_drop_rate", item);
    rates.push_back(scratch.train.channel_drop_rate);
  }
  const DataSplit data = load_dataset(cfg.dataset, cfg.test_dataset, cfg.train.seed);
  const Network initial = make_network(cfg, data.train);
  const auto rows = sweep_channel_rate(cfg.train, cfg.policy, initial, rates, data.train, data.test, cfg.dropback);
  const fs::path out = prepare_out(c);
  write_file(out / "config.txt", format_config(cfg));
  write_file(out / "sweep.csv", sweep_csv(rows));
  for (const auto& r : rows) std::printf("rate %.3g  test %.4f\n", r.rate, r.final_test_accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-wise dropped weight updates for small networks"};
  app.require_subcommand(1);

  Common train_c, eval_c, grad_c, cmp_c, sweep_c;
  std::string resume, model, variants, rates = "0,0.25,0.5,0.75,1";
  std::size_t start_epoch = 0;
  GradcheckOptions gopts;

  auto* train = app.add_subcommand("train", "train one network and write metrics.csv and model.cdbk");
  add_common(*train, train_c);
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--start-epoch", start_epoch, "first epoch to run when resuming");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(*eval, eval_c);
  eval->add_option("--model", model, "checkpoint file")->required();

  auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  add_common(*grad, grad_c);
  grad->add_option("--trials", gopts.trials)->capture_default_str();
  grad->add_option("--epsilon", gopts.epsilon)->capture_default_str();
  grad->add_option("--tolerance", gopts.tolerance)->capture_default_str();
  grad->add_option("--net", gopts.net_spec, "fixed topology instead of random nets");

  auto* cmp = app.add_subcommand("compare", "train several variants from the same initial weights");
  add_common(*cmp, cmp_c);
  cmp->add_option("--variants", variants, "comma list of baseline, dropback_adaptive, dropback_fixed, "
                                          "dropback_no_skip, dropout (default: all)");

  auto* sweep = app.add_subcommand("sweep", "one run per channel drop rate");
  add_common(*sweep, sweep_c);
  sweep->add_option("--rates", rates, "comma list of channel drop rates")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_c, resume, start_epoch);
    if (*eval) return cmd_eval(eval_c, model);
    if (*grad) return cmd_gradcheck(grad_c, gopts);
    if (*cmp) return cmd_compare(cmp_c, variants);
    if (*sweep) return cmd_sweep(sweep_c, rates);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
