// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cdb/data.hpp"
#include "cdb/layers.hpp"
#include "cdb/optimizer.hpp"
#include "cdb/policy.hpp"

namespace cdb {

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
  double layer_drop_rate = 0.0;
  /// droppable layer index -> iterations in which it was the selected layer
  std::map<std::size_t, std::size_t> selected_layer_counts;
  double epoch_wall_time_seconds = 0.0;
};

struct RunOptions {
  DropSchedule schedule = DropSchedule::adaptive;
  /// Replaces the scheduled layer drop rate for every epoch when set.
  std::optional<double> layer_drop_rate_override;
  /// First epoch to run; earlier epochs are assumed done (e.g. restored from a checkpoint).
  std::size_t start_epoch = 0;
  /// Called after every epoch with the finished record.
  std::function<void(const MetricsRecord&, const Network&)> on_epoch;
  /// May rewrite the sampled decision before it is applied (tests, instrumentation).
  std::function<void(DropDecision&, std::size_t epoch, std::size_t iteration)> decision_hook;
};

/// Initializes weights from the seed's init stream.
void initialize_network(Network& net, std::uint64_t seed);

/// Per iteration: forward, loss, drop decision, backward, gradient masking,
/// masked SGD step. Per epoch: eval-mode test evaluation and one record.
/// Shuffle, drop and dropout randomness are independent streams derived from
/// (cfg.seed, epoch). The policy's layer_drop_rate is replaced by the
/// schedule and its channel_drop_rate by cfg.channel_drop_rate.
std::vector<MetricsRecord> run_training(const TrainConfig& cfg, const DropPolicy& policy, Network& net,
                                        const Dataset& train, const Dataset& test, const RunOptions& options = {});

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Eval-mode pass over the whole dataset in index order; consumes no randomness.
Evaluation evaluate(Network& net, const Dataset& ds, std::size_t batch_size = 256);

// ---------------------------------------------------------------- metrics CSV

std::string metrics_csv_header(bool include_timing = true);
std::string metrics_csv_row(const MetricsRecord& r, bool include_timing = true);
std::string metrics_csv(const std::vector<MetricsRecord>& records, bool include_timing = true);

// ---------------------------------------------------------------- gradcheck

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
/// to round-off from reporting huge relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradcheckOptions {
  std::size_t trials = 20;
  double epsilon = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  std::size_t batch = 3;
  /// Fixed topology to check (its first layer decides the input shape);
  /// empty cycles through random dense, conv and residual networks.
  std::string net_spec;
  /// Applied to the network between backward and comparison (negative controls).
  std::function<void(Network&)> corrupt;
};

struct GradcheckTrial {
  std::string topology;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
};

struct GradcheckReport {
  std::vector<GradcheckTrial> trials;
  double max_rel_error = 0.0;
  bool passed = false;
};

GradcheckReport gradcheck_run(const GradcheckOptions& options);

/// Max relative error of every parameter gradient of `net` for one batch.
GradcheckTrial gradcheck_network(Network& net, const Tensor& inputs, const std::vector<int>& labels, double epsilon,
                                 const std::function<void(Network&)>& corrupt = {});

// ---------------------------------------------------------------- experiments

enum class Variant { baseline, dropback_adaptive, dropback_fixed, dropback_no_skip, dropout };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);
const std::vector<Variant>& all_variants();

struct ComparisonRow {
  Variant variant = Variant::baseline;
  double final_test_accuracy = 0.0;
  double mean_epoch_time_seconds = 0.0;
  DropSchedule schedule = DropSchedule::off;
  std::size_t skip_first_n = 0;
  double channel_drop_rate = 0.0;
  /// FNV-1a digest of the initial parameter values.
  std::uint64_t init_digest = 0;
  std::vector<MetricsRecord> metrics;
};

/// Trains every variant from a copy of `initial` (already initialized), so
/// all variants start from bit-identical weights.
std::vector<ComparisonRow> compare_run(const TrainConfig& cfg, const DropPolicy& policy, const Network& initial,
                                       const std::vector<Variant>& variants, const Dataset& train,
                                       const Dataset& test, double dropout_keep_prob = 0.7);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);

struct SweepRow {
  double rate = 0.0;
  double final_test_accuracy = 0.0;
};

/// One run per channel drop rate from a copy of `initial`.
std::vector<SweepRow> sweep_channel_rate(const TrainConfig& cfg, const DropPolicy& policy, const Network& initial,
                                         const std::vector<double>& rates, const Dataset& train, const Dataset& test,
                                         DropSchedule schedule = DropSchedule::adaptive);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// FNV-1a over the bytes of every parameter value.
std::uint64_t parameter_digest(const Network& net);

}  // namespace cdb
