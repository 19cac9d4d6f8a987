// SPDX-License-Identifier: Apache-2.0
#include "cdb/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdb/errors.hpp"

namespace cdb {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "epochs",           "batch_size",        "lr0",           "momentum",          "weight_decay",
      "lr_milestone_fractions", "lr_gamma",   "drop_rate_initial", "drop_rate_final", "channel_drop_rate",
      "seed",             "layer_drop_rate",   "skip_first_n",  "channel_mode",      "count_mode",
      "dropback",         "dropout_keep_prob", "arch",          "dataset",           "test_dataset"};
  return keys;
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view raw) {
  const auto value = trim(raw);
  auto& t = cfg.train;
  if (key == "epochs") {
    t.epochs = to_uint(key, value);
  } else if (key == "batch_size") {
    t.batch_size = to_uint(key, value);
  } else if (key == "lr0") {
    t.lr0 = to_double(key, value);
  } else if (key == "momentum") {
    t.momentum = to_double(key, value);
  } else if (key == "weight_decay") {
    t.weight_decay = to_double(key, value);
  } else if (key == "lr_milestone_fractions") {
    t.lr_milestone_fractions.clear();
    for (auto item : split(value, ',')) t.lr_milestone_fractions.push_back(to_double(key, item));
  } else if (key == "lr_gamma") {
    t.lr_gamma = to_double(key, value);
  } else if (key == "drop_rate_initial") {
    t.drop_rate_initial = to_double(key, value);
  } else if (key == "drop_rate_final") {
    t.drop_rate_final = to_double(key, value);
  } else if (key == "channel_drop_rate") {
    t.channel_drop_rate = to_double(key, value);
    cfg.policy.channel_drop_rate = t.channel_drop_rate;
  } else if (key == "seed") {
    t.seed = to_uint(key, value);
  } else if (key == "layer_drop_rate") {
    if (value == "schedule" || value.empty())
      cfg.layer_drop_rate.reset();
    else
      cfg.layer_drop_rate = to_double(key, value);
  } else if (key == "skip_first_n") {
    cfg.policy.skip_first_n = to_uint(key, value);
  } else if (key == "channel_mode") {
    cfg.policy.channel_mode = parse_channel_mode(value);
  } else if (key == "count_mode") {
    cfg.policy.count_mode = parse_count_mode(value);
  } else if (key == "dropback") {
    cfg.dropback = parse_drop_schedule(value);
  } else if (key == "dropout_keep_prob") {
    cfg.dropout_keep_prob = to_double(key, value);
  } else if (key == "arch") {
    cfg.arch = std::string(value);
  } else if (key == "dataset") {
    cfg.dataset = std::string(value);
  } else if (key == "test_dataset") {
    cfg.test_dataset = std::string(value);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

void apply_config_text(ExperimentConfig& cfg, std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void load_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string format_config(const ExperimentConfig& cfg) {
  const auto& t = cfg.train;
  std::ostringstream os;
  os << "epochs = " << t.epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "lr0 = " << fmt(t.lr0) << '\n'
     << "momentum = " << fmt(t.momentum) << '\n'
     << "weight_decay = " << fmt(t.weight_decay) << '\n'
     << "lr_milestone_fractions = ";
  for (std::size_t i = 0; i < t.lr_milestone_fractions.size(); ++i)
    os << (i ? "," : "") << fmt(t.lr_milestone_fractions[i]);
  os << '\n'
     << "lr_gamma = " << fmt(t.lr_gamma) << '\n'
     << "drop_rate_initial = " << fmt(t.drop_rate_initial) << '\n'
     << "drop_rate_final = " << fmt(t.drop_rate_final) << '\n'
     << "channel_drop_rate = " << fmt(t.channel_drop_rate) << '\n'
     << "seed = " << t.seed << '\n'
     << "layer_drop_rate = " << (cfg.layer_drop_rate ? fmt(*cfg.layer_drop_rate) : std::string("schedule")) << '\n'
     << "skip_first_n = " << cfg.policy.skip_first_n << '\n'
     << "channel_mode = " << to_string(cfg.policy.channel_mode) << '\n'
     << "count_mode = " << to_string(cfg.policy.count_mode) << '\n'
     << "dropback = " << to_string(cfg.dropback) << '\n'
     << "dropout_keep_prob = " << fmt(cfg.dropout_keep_prob) << '\n'
     << "arch = " << cfg.arch << '\n'
     << "dataset = " << cfg.dataset << '\n'
     << "test_dataset = " << cfg.test_dataset << '\n';
  return os.str();
}

namespace {

Dataset load_one(std::string_view spec, std::uint64_t seed) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos)
    throw ConfigError("dataset spec '" + std::string(spec) + "' must look like kind:args");
  const auto kind = spec.substr(0, colon);
  const auto args = split(spec.substr(colon + 1), ',');
  if (kind == "blobs") {
    if (args.size() != 4 && args.size() != 5)
      throw ConfigError("blobs spec is blobs:<n>,<k>,<dim>,<spread>[,<C>x<H>x<W>]");
    Dataset ds = gen_blobs(to_uint("blobs n", args[0]), to_uint("blobs k", args[1]), to_uint("blobs dim", args[2]),
                           to_double("blobs spread", args[3]), seed);
    if (args.size() == 5) {
      Shape shape;
      for (auto d : split(args[4], 'x')) shape.push_back(to_uint("blobs shape", d));
      ds = ds.reshaped(shape);
    }
    return ds;
  }
  if (kind == "idx") {
    if (args.size() != 2) throw ConfigError("idx spec is idx:<images>,<labels>");
    return load_idx(std::string(args[0]), std::string(args[1]));
  }
  if (kind == "csv") {
    if (args.size() != 1) throw ConfigError("csv spec is csv:<path>");
    return load_csv(std::string(args[0]));
  }
  throw ConfigError("unknown dataset kind '" + std::string(kind) + "'");
}

}  // namespace

DataSplit load_dataset(std::string_view spec, std::string_view test_spec, std::uint64_t seed) {
  DataSplit split_out;
  const bool blobs = spec.starts_with("blobs:");
  split_out.train = load_one(spec, seed);
  if (!test_spec.empty()) {
    split_out.test = load_one(test_spec, seed + 1);
  } else if (blobs) {
    split_out.test = load_one(spec, seed + 1);
  } else {
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < split_out.train.size(); ++i) (i % 5 == 4 ? test_idx : train_idx).push_back(i);
    if (test_idx.empty() || train_idx.empty())
      throw InputError("dataset too small to split into train and test (need at least 5 samples)");
    Dataset all = std::move(split_out.train);
    split_out.train = all.subset(train_idx);
    split_out.test = all.subset(test_idx);
  }
  const std::size_t k = std::max(split_out.train.num_classes, split_out.test.num_classes);
  split_out.train.num_classes = split_out.test.num_classes = k;
  if (split_out.train.sample_shape() != split_out.test.sample_shape())
    throw InputError("train samples " + shape_str(split_out.train.sample_shape()) + " and test samples " +
                     shape_str(split_out.test.sample_shape()) + " differ in shape");
  return split_out;
}

}  // namespace cdb
