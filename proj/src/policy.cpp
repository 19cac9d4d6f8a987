// SPDX-License-Identifier: Apache-2.0
#include "cdb/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cdb/errors.hpp"

namespace cdb {

std::string_view to_string(ChannelMode mode) {
  return mode == ChannelMode::prefix ? "prefix" : "random_subset";
}

std::string_view to_string(CountMode mode) { return mode == CountMode::bernoulli ? "bernoulli" : "fixed_count"; }

ChannelMode parse_channel_mode(std::string_view text) {
  if (text == "random_subset") return ChannelMode::random_subset;
  if (text == "prefix") return ChannelMode::prefix;
  throw ConfigError("channel_mode must be random_subset or prefix, got '" + std::string(text) + "'");
}

CountMode parse_count_mode(std::string_view text) {
  if (text == "fixed_count") return CountMode::fixed_count;
  if (text == "bernoulli") return CountMode::bernoulli;
  throw ConfigError("count_mode must be fixed_count or bernoulli, got '" + std::string(text) + "'");
}

void DropPolicy::validate() const {
  if (!(layer_drop_rate >= 0.0 && layer_drop_rate <= 1.0))
    throw ConfigError("layer_drop_rate must be in [0,1], got " + std::to_string(layer_drop_rate));
  if (!(channel_drop_rate >= 0.0 && channel_drop_rate <= 1.0))
    throw ConfigError("channel_drop_rate must be in [0,1], got " + std::to_string(channel_drop_rate));
}

std::size_t DropDecision::dropped_count() const {
  return static_cast<std::size_t>(std::count(update_mask.begin(), update_mask.end(), false));
}

std::vector<std::size_t> eligible_layer_indices(const Network& net, const DropPolicy& policy) {
  auto idx = droppable_layer_indices(net);
  if (policy.skip_first_n >= idx.size()) return {};
  idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(policy.skip_first_n));
  return idx;
}

std::optional<std::size_t> select_layer(const Network& net, const DropPolicy& policy, Rng& rng) {
  const auto eligible = eligible_layer_indices(net, policy);
  if (eligible.empty()) return std::nullopt;
  if (!(rng.uniform() < policy.layer_drop_rate)) return std::nullopt;
  return eligible[rng.index(eligible.size())];
}

std::size_t drop_count(std::size_t channel_count, double channel_drop_rate) {
  const double k = std::round(channel_drop_rate * static_cast<double>(channel_count));
  return std::min(channel_count, static_cast<std::size_t>(std::max(k, 0.0)));
}

std::vector<bool> select_channels(std::size_t channel_count, const DropPolicy& policy, Rng& rng) {
  std::vector<bool> mask(channel_count, true);
  if (policy.count_mode == CountMode::bernoulli) {
    for (std::size_t c = 0; c < channel_count; ++c) mask[c] = !(rng.uniform() < policy.channel_drop_rate);
    return mask;
  }
  const std::size_t k = drop_count(channel_count, policy.channel_drop_rate);
  if (policy.channel_mode == ChannelMode::prefix) {
    std::fill_n(mask.begin(), k, false);
    return mask;
  }
  // partial Fisher-Yates: the first k slots end up a uniform k-subset
  std::vector<std::size_t> order(channel_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(channel_count - i);
    std::swap(order[i], order[j]);
    mask[order[i]] = false;
  }
  return mask;
}

DropDecision make_drop_decision(const Network& net, const DropPolicy& policy, Rng& rng) {
  DropDecision decision;
  decision.selected_layer = select_layer(net, policy, rng);
  if (decision.selected_layer)
    decision.update_mask = select_channels(net.layer(*decision.selected_layer).channel_count(), policy, rng);
  return decision;
}

void apply_update_mask(Layer& layer, const std::vector<bool>& update_mask) {
  bool matched = false;
  for (auto* p : layer.mutable_params()) {
    if (!p->droppable || p->channel_count() != update_mask.size()) continue;
    matched = true;
    const std::size_t slice = p->grad.slice_size();
    for (std::size_t c = 0; c < update_mask.size(); ++c)
      if (!update_mask[c]) std::fill_n(p->grad.data().begin() + static_cast<std::ptrdiff_t>(c * slice), slice, 0.0);
  }
  if (!matched)
    throw std::logic_error("update mask of length " + std::to_string(update_mask.size()) +
                           " matches no parameter of the selected " + std::string(to_string(layer.kind())) +
                           " layer");
}

}  // namespace cdb
