// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "cdb/layers.hpp"
#include "cdb/policy.hpp"

namespace cdb {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<double> lr_milestone_fractions{0.3, 0.6, 0.8};
  double lr_gamma = 0.1;
  double drop_rate_initial = 0.01;
  double drop_rate_final = 0.3;
  double channel_drop_rate = 0.5;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// How the layer drop rate evolves over training.
enum class DropSchedule {
  off,       ///< never drop (baseline SGD)
  adaptive,  ///< zero before the first milestone, linear ramp to the final rate at the last
  fixed,     ///< drop_rate_final from epoch 0
};

std::string_view to_string(DropSchedule schedule);
DropSchedule parse_drop_schedule(std::string_view text);

/// floor(fraction * epochs) for every milestone fraction.
std::vector<std::size_t> milestone_epochs(const TrainConfig& cfg);

/// lr0 * lr_gamma^(number of milestones <= epoch)
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Adaptive layer drop rate: 0 before the first milestone, drop_rate_initial
/// at it, linear up to drop_rate_final at the last milestone, constant after.
/// With a single milestone the rate jumps straight to drop_rate_final.
double layer_drop_rate_at_epoch(const TrainConfig& cfg, std::size_t epoch);

double scheduled_layer_drop_rate(const TrainConfig& cfg, DropSchedule schedule, std::size_t epoch);

/// SGD with momentum and weight decay:
///   buf <- momentum * buf + grad + weight_decay * value
///   value <- value - lr * buf
/// Entries dropped by `decision` keep both value and buf untouched.
/// All gradients are zeroed afterwards.
void sgd_step_masked(Network& net, const DropDecision& decision, double lr, double momentum, double weight_decay);

}  // namespace cdb
