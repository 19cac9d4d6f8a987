// SPDX-License-Identifier: Apache-2.0
#include "cdb/optimizer.hpp"

#include <cmath>
#include <string>

#include "cdb/errors.hpp"

namespace cdb {

std::string_view to_string(DropSchedule schedule) {
  switch (schedule) {
    case DropSchedule::off: return "off";
    case DropSchedule::adaptive: return "on";
    case DropSchedule::fixed: return "fixed";
  }
  return "off";
}

DropSchedule parse_drop_schedule(std::string_view text) {
  if (text == "off") return DropSchedule::off;
  if (text == "on" || text == "adaptive") return DropSchedule::adaptive;
  if (text == "fixed") return DropSchedule::fixed;
  throw ConfigError("dropback must be on, off or fixed, got '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("lr_gamma must be in (0,1]");
  if (lr_milestone_fractions.empty())
    throw ConfigError("at least one lr milestone is required to anchor the drop-rate schedule");
  double prev = 0.0;
  for (double f : lr_milestone_fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("lr milestone fractions must lie in (0,1)");
    if (!(f > prev)) throw ConfigError("lr milestone fractions must be strictly increasing");
    prev = f;
  }
  if (!(drop_rate_initial >= 0.0 && drop_rate_initial <= drop_rate_final && drop_rate_final <= 1.0))
    throw ConfigError("need 0 <= drop_rate_initial <= drop_rate_final <= 1");
  if (!(channel_drop_rate >= 0.0 && channel_drop_rate <= 1.0))
    throw ConfigError("channel_drop_rate must be in [0,1]");
}

std::vector<std::size_t> milestone_epochs(const TrainConfig& cfg) {
  std::vector<std::size_t> out;
  out.reserve(cfg.lr_milestone_fractions.size());
  // The small offset keeps e.g. 0.3 * 200 = 59.99999... from flooring to 59.
  for (double f : cfg.lr_milestone_fractions)
    out.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(cfg.epochs) + 1e-9)));
  return out;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr0;
  for (std::size_t m : milestone_epochs(cfg))
    if (m <= epoch) lr *= cfg.lr_gamma;
  return lr;
}

double layer_drop_rate_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  const auto ms = milestone_epochs(cfg);
  if (ms.empty()) throw ConfigError("drop-rate schedule needs at least one lr milestone");
  const std::size_t first = ms.front(), last = ms.back();
  if (epoch < first) return 0.0;
  if (epoch >= last) return cfg.drop_rate_final;
  const double t = static_cast<double>(epoch - first) / static_cast<double>(last - first);
  return cfg.drop_rate_initial + (cfg.drop_rate_final - cfg.drop_rate_initial) * t;
}

double scheduled_layer_drop_rate(const TrainConfig& cfg, DropSchedule schedule, std::size_t epoch) {
  switch (schedule) {
    case DropSchedule::off: return 0.0;
    case DropSchedule::adaptive: return layer_drop_rate_at_epoch(cfg, epoch);
    case DropSchedule::fixed: return cfg.drop_rate_final;
  }
  return 0.0;
}

namespace {

void step_range(double* value, double* buf, double* grad, std::size_t n, double lr, double momentum,
                double weight_decay) {
  for (std::size_t i = 0; i < n; ++i) {
    buf[i] = momentum * buf[i] + grad[i] + weight_decay * value[i];
    value[i] -= lr * buf[i];
  }
}

}  // namespace

void sgd_step_masked(Network& net, const DropDecision& decision, double lr, double momentum, double weight_decay) {
  for (std::size_t li = 0; li < net.size(); ++li) {
    const bool selected = decision.selected_layer == li;
    for (ParamTensor* p : net.layer(li).mutable_params()) {
      double* value = p->values.data().data();
      double* buf = p->momentum.data().data();
      double* grad = p->grad.data().data();
      const bool masked = selected && p->droppable && p->channel_count() == decision.update_mask.size();
      if (!masked) {
        step_range(value, buf, grad, p->values.size(), lr, momentum, weight_decay);
      } else {
        const std::size_t slice = p->values.slice_size();
        for (std::size_t c = 0; c < decision.update_mask.size(); ++c) {
          if (!decision.update_mask[c]) continue;
          const std::size_t off = c * slice;
          step_range(value + off, buf + off, grad + off, slice, lr, momentum, weight_decay);
        }
      }
      p->grad.fill(0.0);
    }
  }
}

}  // namespace cdb
