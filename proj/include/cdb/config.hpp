// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdb/data.hpp"
#include "cdb/optimizer.hpp"
#include "cdb/policy.hpp"

namespace cdb {

/// Everything one CLI invocation needs. Every field is addressable as a
/// `key = value` line in a config file and as a `--key value` flag.
struct ExperimentConfig {
  TrainConfig train;
  DropPolicy policy;
  DropSchedule dropback = DropSchedule::adaptive;
  /// Constant layer drop rate replacing the schedule, when set.
  std::optional<double> layer_drop_rate;
  double dropout_keep_prob = 0.7;
  /// "auto" picks mlp for flat samples and cnn for image samples.
  std::string arch = "auto";
  std::string dataset = "blobs:200,3,8,0.5";
  std::string test_dataset;
};

/// Keys accepted by apply_setting, in documentation order.
const std::vector<std::string>& config_keys();

/// Sets one key from its textual value; ConfigError on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Parses `key = value` lines; '#' starts a comment, blank lines are ignored.
void apply_config_text(ExperimentConfig& cfg, std::string_view text, std::string_view origin = "<config>");
void load_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);

/// Resolved configuration as `key = value` lines (readable by apply_config_text).
std::string format_config(const ExperimentConfig& cfg);

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Resolves a dataset spec:
///   blobs:<n>,<k>,<dim>,<spread>[,<C>x<H>x<W>]   train and test drawn independently
///   idx:<images>,<labels>
///   csv:<path>
/// Without a test spec, idx/csv data is split: every fifth sample goes to test.
DataSplit load_dataset(std::string_view spec, std::string_view test_spec, std::uint64_t seed);

}  // namespace cdb
