// SPDX-License-Identifier: Apache-2.0
#include "cdb/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <sstream>

#include "cdb/errors.hpp"
#include "cdb/rng.hpp"

namespace cdb {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

}  // namespace

void initialize_network(Network& net, std::uint64_t seed) {
  Rng rng(seed, Stream::init);
  net.initialize(rng);
}

std::vector<MetricsRecord> run_training(const TrainConfig& cfg, const DropPolicy& policy, Network& net,
                                        const Dataset& train, const Dataset& test, const RunOptions& options) {
  cfg.validate();
  train.validate();
  test.validate();

  DropPolicy p = policy;
  p.channel_drop_rate = cfg.channel_drop_rate;
  if (options.layer_drop_rate_override) p.layer_drop_rate = *options.layer_drop_rate_override;
  p.validate();

  const auto droppable = droppable_layer_indices(net);
  std::vector<MetricsRecord> records;
  net.set_mode(Mode::train);

  for (std::size_t epoch = options.start_epoch; epoch < cfg.epochs; ++epoch) {
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at_epoch(cfg, epoch);
    rec.layer_drop_rate = options.layer_drop_rate_override ? *options.layer_drop_rate_override
                                                           : scheduled_layer_drop_rate(cfg, options.schedule, epoch);
    p.layer_drop_rate = rec.layer_drop_rate;
    for (auto i : droppable) rec.selected_layer_counts[i] = 0;

    Rng drop_rng(cfg.seed, Stream::drop, epoch);
    Rng dropout_rng(cfg.seed, Stream::dropout, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    const auto t0 = std::chrono::steady_clock::now();
    auto it = batches(train, cfg.batch_size, epoch, cfg.seed);
    std::size_t iteration = 0;
    while (auto batch = it.next()) {
      const Tensor logits = net.forward(batch->inputs, &dropout_rng);
      LossAndGrad lg = softmax_cross_entropy(logits, batch->labels);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", iteration " +
                              std::to_string(iteration));
      }
      loss_sum += lg.loss * static_cast<double>(batch->labels.size());
      correct += count_correct(logits, batch->labels);

      DropDecision decision;
      if (options.schedule != DropSchedule::off || options.layer_drop_rate_override)
        decision = make_drop_decision(net, p, drop_rng);
      if (options.decision_hook) options.decision_hook(decision, epoch, iteration);

      net.backward(lg.grad_logits);
      if (!decision.empty()) {
        apply_update_mask(net.layer(*decision.selected_layer), decision.update_mask);
        ++rec.selected_layer_counts[*decision.selected_layer];
      }
      sgd_step_masked(net, decision, rec.lr, cfg.momentum, cfg.weight_decay);
      ++iteration;
    }
    const auto t1 = std::chrono::steady_clock::now();
    net.clear_cache();

    rec.epoch_wall_time_seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    rec.test_accuracy = evaluate(net, test).accuracy;
    records.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec, net);
  }
  return records;
}

Evaluation evaluate(Network& net, const Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw InputError("cannot evaluate an empty dataset");
  const Mode previous = net.mode();
  net.set_mode(Mode::eval);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Dataset chunk = ds.subset(idx);
    try {
      const Tensor logits = net.forward(chunk.inputs);
      if (logits.rank() != 2 || logits.dim(1) < ds.num_classes)
        throw DimensionError("network produces " + shape_str(logits.shape()) + " logits for " +
                             std::to_string(ds.num_classes) + " classes");
      loss_sum += softmax_cross_entropy(logits, chunk.labels).loss * static_cast<double>(chunk.size());
      correct += count_correct(logits, chunk.labels);
    } catch (...) {
      net.set_mode(previous);
      throw;
    }
  }
  net.set_mode(previous);
  return {loss_sum / static_cast<double>(ds.size()), static_cast<double>(correct) / static_cast<double>(ds.size())};
}

// ---------------------------------------------------------------- metrics CSV

std::string metrics_csv_header(bool include_timing) {
  std::string h = "epoch,train_loss,train_accuracy,test_accuracy,lr,layer_drop_rate,selected_layer_counts";
  if (include_timing) h += ",epoch_wall_time_seconds";
  return h;
}

std::string metrics_csv_row(const MetricsRecord& r, bool include_timing) {
  std::string row = std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.train_accuracy) + "," +
                    fmt(r.test_accuracy) + "," + fmt(r.lr) + "," + fmt(r.layer_drop_rate) + ",";
  bool first = true;
  for (const auto& [layer, count] : r.selected_layer_counts) {
    if (!first) row += '|';
    row += std::to_string(layer) + ":" + std::to_string(count);
    first = false;
  }
  if (include_timing) row += "," + fmt(r.epoch_wall_time_seconds);
  return row;
}

std::string metrics_csv(const std::vector<MetricsRecord>& records, bool include_timing) {
  std::string out = metrics_csv_header(include_timing) + "\n";
  for (const auto& r : records) out += metrics_csv_row(r, include_timing) + "\n";
  return out;
}

// ---------------------------------------------------------------- gradcheck

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckTrial gradcheck_network(Network& net, const Tensor& inputs, const std::vector<int>& labels, double epsilon,
                                 const std::function<void(Network&)>& corrupt) {
  if (!(epsilon > 0.0)) throw ConfigError("gradcheck epsilon must be positive");
  const Mode previous = net.mode();
  net.set_mode(Mode::train);
  net.zero_grads();
  const Tensor logits = net.forward(inputs);
  net.backward(softmax_cross_entropy(logits, labels).grad_logits);
  net.clear_cache();
  if (corrupt) corrupt(net);

  GradcheckTrial trial;
  trial.topology = net.describe();
  net.set_mode(Mode::eval);
  auto loss_at = [&]() { return softmax_cross_entropy(net.forward(inputs), labels).loss; };
  for (std::size_t li = 0; li < net.size(); ++li)
    for (ParamTensor* p : net.layer(li).mutable_params())
      for (std::size_t i = 0; i < p->values.size(); ++i) {
        const double saved = p->values[i];
        p->values[i] = saved + epsilon;
        const double up = loss_at();
        p->values[i] = saved - epsilon;
        const double down = loss_at();
        p->values[i] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double err = relative_error(p->grad[i], numeric);
        ++trial.checked;
        if (trial.worst_param.empty() || err > trial.max_rel_error) {
          trial.max_rel_error = err;
          trial.worst_param = std::to_string(li) + "." + p->name + "[" + std::to_string(i) + "]";
        }
      }
  net.zero_grads();
  net.set_mode(previous);
  return trial;
}

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// Appends flatten + dense head after measuring the convolutional trunk.
std::string with_head(const std::string& trunk, const Shape& input_shape, std::size_t classes) {
  Network probe = build_network(trunk);
  probe.set_mode(Mode::eval);
  const Tensor out = probe.forward(Tensor(input_shape));
  return trunk + ";flatten;dense:" + std::to_string(out.slice_size()) + "," + std::to_string(classes);
}

struct RandomCase {
  std::string spec;
  Shape input_shape;
  std::size_t classes;
};

RandomCase random_case(std::size_t trial, std::size_t batch, Rng& rng) {
  RandomCase rc;
  rc.classes = pick(rng, 2, 4);
  std::ostringstream os;
  switch (trial % 3) {
    case 0: {
      const std::size_t d = pick(rng, 2, 6);
      rc.input_shape = {batch, d};
      std::size_t prev = d;
      const std::size_t hidden = pick(rng, 1, 3);
      for (std::size_t h = 0; h < hidden; ++h) {
        const std::size_t w = pick(rng, 2, 6);
        os << "dense:" << prev << ',' << w << ";relu;";
        prev = w;
      }
      os << "dense:" << prev << ',' << rc.classes;
      rc.spec = os.str();
      break;
    }
    case 1: {
      const std::size_t c = pick(rng, 1, 3), h = pick(rng, 4, 6), w = pick(rng, 4, 6);
      rc.input_shape = {batch, c, h, w};
      const std::size_t c1 = pick(rng, 1, 4), c2 = pick(rng, 1, 4);
      const std::size_t k = pick(rng, 1, 3), s = pick(rng, 1, 2), pad = pick(rng, 0, 1);
      os << "conv:" << c << ',' << c1 << ',' << k << ',' << s << ',' << pad << ";relu;conv:" << c1 << ',' << c2
         << ",2,1,0;relu";
      std::string trunk = os.str();
      if (rng.index(2)) {
        Network probe = build_network(trunk);
        probe.set_mode(Mode::eval);
        const Tensor out = probe.forward(Tensor(rc.input_shape));
        if (out.dim(2) >= 2 && out.dim(3) >= 2) trunk += ";avgpool:2";
      }
      rc.spec = with_head(trunk, rc.input_shape, rc.classes);
      break;
    }
    default: {
      const std::size_t c = pick(rng, 1, 2), hw = 4;
      rc.input_shape = {batch, c, hw, hw};
      const std::size_t c1 = pick(rng, 2, 3), c2 = pick(rng, 2, 4), s = pick(rng, 1, 2);
      os << "conv:" << c << ',' << c1 << ",3,1,1;relu;res:" << c1 << ',' << c1 << ",1;res:" << c1 << ',' << c2 << ','
         << s;
      rc.spec = with_head(os.str(), rc.input_shape, rc.classes);
      break;
    }
  }
  return rc;
}

Shape input_shape_for(const Network& net, std::size_t batch) {
  const Layer& first = net.layer(0);
  const auto params = first.params();
  if (params.empty()) throw ConfigError("gradcheck net_spec must start with a dense, conv or res layer");
  const Shape& w = params.front()->values.shape();
  switch (first.kind()) {
    case LayerKind::dense: return {batch, w[1]};
    case LayerKind::conv2d:
    case LayerKind::residual_block: return {batch, w[1], 5, 5};
    default: throw ConfigError("gradcheck net_spec must start with a dense, conv or res layer");
  }
}

}  // namespace

GradcheckReport gradcheck_run(const GradcheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw ConfigError("gradcheck epsilon must be positive");
  GradcheckReport report;
  Rng rng(options.seed, Stream::init, 0xc4ec);
  for (std::size_t t = 0; t < options.trials; ++t) {
    Network net;
    Shape input_shape;
    std::size_t classes = 0;
    if (options.net_spec.empty()) {
      const RandomCase rc = random_case(t, options.batch, rng);
      net = build_network(rc.spec);
      input_shape = rc.input_shape;
      classes = rc.classes;
    } else {
      net = build_network(options.net_spec);
      input_shape = input_shape_for(net, options.batch);
      net.set_mode(Mode::eval);
      classes = net.forward(Tensor(input_shape)).dim(1);
    }
    net.initialize(rng);
    // nonzero biases so that no unit sits exactly on a ReLU kink
    for (auto* p : net.mutable_params())
      if (p->values.rank() == 1)
        for (auto& v : p->values.data()) v = 0.1 * rng.normal();
    Tensor inputs(input_shape);
    for (auto& v : inputs.data()) v = rng.normal();
    std::vector<int> labels(options.batch);
    for (auto& l : labels) l = static_cast<int>(rng.index(classes));
    GradcheckTrial trial = gradcheck_network(net, inputs, labels, options.epsilon, options.corrupt);
    report.max_rel_error = std::max(report.max_rel_error, trial.max_rel_error);
    report.trials.push_back(std::move(trial));
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

// ---------------------------------------------------------------- experiments

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::dropback_adaptive: return "dropback_adaptive";
    case Variant::dropback_fixed: return "dropback_fixed";
    case Variant::dropback_no_skip: return "dropback_no_skip";
    case Variant::dropout: return "dropout";
  }
  return "baseline";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : all_variants())
    if (to_string(v) == text) return v;
  throw ConfigError("unknown variant '" + std::string(text) +
                    "' (expected baseline, dropback_adaptive, dropback_fixed, dropback_no_skip or dropout)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::baseline, Variant::dropback_adaptive, Variant::dropback_fixed,
                                      Variant::dropback_no_skip, Variant::dropout};
  return v;
}

std::uint64_t parameter_digest(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : net.params())
    for (double v : p->values.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

std::vector<ComparisonRow> compare_run(const TrainConfig& cfg, const DropPolicy& policy, const Network& initial,
                                       const std::vector<Variant>& variants, const Dataset& train,
                                       const Dataset& test, double dropout_keep_prob) {
  std::vector<ComparisonRow> rows;
  for (Variant v : variants) {
    ComparisonRow row;
    row.variant = v;
    DropPolicy p = policy;
    RunOptions opts;
    Network net = v == Variant::dropout ? with_dropout(initial, dropout_keep_prob) : initial;
    switch (v) {
      case Variant::baseline:
      case Variant::dropout: opts.schedule = DropSchedule::off; break;
      case Variant::dropback_adaptive: opts.schedule = DropSchedule::adaptive; break;
      case Variant::dropback_fixed: opts.schedule = DropSchedule::fixed; break;
      case Variant::dropback_no_skip:
        opts.schedule = DropSchedule::adaptive;
        p.skip_first_n = 0;
        break;
    }
    row.schedule = opts.schedule;
    row.skip_first_n = p.skip_first_n;
    row.channel_drop_rate = cfg.channel_drop_rate;
    row.init_digest = parameter_digest(net);
    row.metrics = run_training(cfg, p, net, train, test, opts);
    row.final_test_accuracy = row.metrics.back().test_accuracy;
    double total = 0.0;
    for (const auto& m : row.metrics) total += m.epoch_wall_time_seconds;
    row.mean_epoch_time_seconds = total / static_cast<double>(row.metrics.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "variant,final_test_accuracy,mean_epoch_time_seconds,dropback,skip_first_n,channel_drop_rate,"
                    "init_digest\n";
  for (const auto& r : rows) {
    char digest[24];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(r.init_digest));
    out += std::string(to_string(r.variant)) + "," + fmt(r.final_test_accuracy) + "," +
           fmt(r.mean_epoch_time_seconds) + "," + std::string(to_string(r.schedule)) + "," +
           std::to_string(r.skip_first_n) + "," + fmt(r.channel_drop_rate) + "," + digest + "\n";
  }
  return out;
}

std::vector<SweepRow> sweep_channel_rate(const TrainConfig& cfg, const DropPolicy& policy, const Network& initial,
                                         const std::vector<double>& rates, const Dataset& train, const Dataset& test,
                                         DropSchedule schedule) {
  std::vector<SweepRow> rows;
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("sweep rates must lie in [0,1], got " + fmt(rate));
    TrainConfig c = cfg;
    c.channel_drop_rate = rate;
    Network net = initial;
    RunOptions opts;
    opts.schedule = schedule;
    const auto metrics = run_training(c, policy, net, train, test, opts);
    rows.push_back({rate, metrics.back().test_accuracy});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "rate,final_test_accuracy\n";
  for (const auto& r : rows) out += fmt(r.rate) + "," + fmt(r.final_test_accuracy) + "\n";
  return out;
}

}  // namespace cdb
