// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "cdb/layers.hpp"
#include "cdb/rng.hpp"

namespace cdb {

/// How the dropped channels of the selected layer are chosen.
enum class ChannelMode {
  random_subset,  ///< uniform without replacement
  prefix,         ///< always channels 0..k-1
};

/// How many channels are dropped.
enum class CountMode {
  fixed_count,  ///< exactly round(channel_drop_rate * C)
  bernoulli,    ///< each channel independently with probability channel_drop_rate
};

std::string_view to_string(ChannelMode mode);
std::string_view to_string(CountMode mode);
ChannelMode parse_channel_mode(std::string_view text);
CountMode parse_count_mode(std::string_view text);

struct DropPolicy {
  /// Probability that some layer is selected for channel dropping this iteration.
  double layer_drop_rate = 0.0;
  /// Fraction (or per-channel probability) of the selected layer's channels
  /// whose updates are dropped.
  double channel_drop_rate = 0.5;
  /// The first skip_first_n droppable layers are never selected.
  std::size_t skip_first_n = 4;
  ChannelMode channel_mode = ChannelMode::random_subset;
  CountMode count_mode = CountMode::fixed_count;

  void validate() const;
};

/// One iteration's drop choice. An absent layer means a plain SGD step.
struct DropDecision {
  std::optional<std::size_t> selected_layer;
  /// true = apply update, false = freeze; indexed by the selected layer's channel axis.
  std::vector<bool> update_mask;

  bool empty() const { return !selected_layer.has_value(); }
  std::size_t dropped_count() const;
};

/// Droppable layer indices that are eligible for selection (after skipping).
std::vector<std::size_t> eligible_layer_indices(const Network& net, const DropPolicy& policy);

std::optional<std::size_t> select_layer(const Network& net, const DropPolicy& policy, Rng& rng);

/// round(rate * C) with halves rounded away from zero.
std::size_t drop_count(std::size_t channel_count, double channel_drop_rate);

std::vector<bool> select_channels(std::size_t channel_count, const DropPolicy& policy, Rng& rng);

DropDecision make_drop_decision(const Network& net, const DropPolicy& policy, Rng& rng);

/// Zeroes the gradient slices of masked-out channels in every droppable
/// parameter of `layer` whose first axis matches the mask length. Throws
/// std::logic_error when no parameter matches.
void apply_update_mask(Layer& layer, const std::vector<bool>& update_mask);

}  // namespace cdb
