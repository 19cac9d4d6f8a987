// SPDX-License-Identifier: Apache-2.0
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "cdb/checkpoint.hpp"
#include "cdb/config.hpp"
#include "cdb/errors.hpp"
#include "cdb/train.hpp"

namespace py = pybind11;
using namespace cdb;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Dataset make_dataset(const Array& inputs, std::vector<int> labels, std::size_t num_classes) {
  Dataset ds{to_tensor(inputs), std::move(labels), num_classes};
  if (ds.num_classes == 0 && !ds.labels.empty())
    ds.num_classes = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  ds.validate();
  return ds;
}

py::dict metrics_dict(const MetricsRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_loss"] = r.train_loss;
  d["train_accuracy"] = r.train_accuracy;
  d["test_accuracy"] = r.test_accuracy;
  d["lr"] = r.lr;
  d["layer_drop_rate"] = r.layer_drop_rate;
  d["selected_layer_counts"] = r.selected_layer_counts;
  d["epoch_wall_time_seconds"] = r.epoch_wall_time_seconds;
  return d;
}

py::list metrics_list(const std::vector<MetricsRecord>& records) {
  py::list out;
  for (const auto& r : records) out.append(metrics_dict(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Channel-wise dropped weight updates: tensors, layers, policy, training";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", error.ptr());
  py::register_exception<InputError>(m, "InputError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<StateError>(m, "StateError", error.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());

  // kernels
  m.def("matmul", [](const Array& a, const Array& b) { return to_array(matmul(to_tensor(a), to_tensor(b))); });
  m.def(
      "conv2d",
      [](const Array& x, const Array& w, std::size_t stride, std::size_t padding) {
        return to_array(conv2d(to_tensor(x), to_tensor(w), stride, padding));
      },
      py::arg("input"), py::arg("weight"), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def(
      "conv2d_grads",
      [](const Array& x, const Array& w, const Array& g, std::size_t stride, std::size_t padding) {
        const ConvGrads r = conv2d_grads(to_tensor(x), to_tensor(w), to_tensor(g), stride, padding);
        return py::make_tuple(to_array(r.grad_input), to_array(r.grad_weight));
      },
      py::arg("input"), py::arg("weight"), py::arg("grad_out"), py::arg("stride") = 1, py::arg("padding") = 0,
      "(grad_input, grad_weight)");
  m.def("relu", [](const Array& x) { return to_array(relu(to_tensor(x))); });
  m.def(
      "softmax_cross_entropy",
      [](const Array& logits, const std::vector<int>& labels) {
        const LossAndGrad r = softmax_cross_entropy(to_tensor(logits), labels);
        return py::make_tuple(r.loss, to_array(r.grad_logits));
      },
      "mean loss and d loss / d logits");

  // enums
  py::enum_<DropSchedule>(m, "DropSchedule")
      .value("off", DropSchedule::off)
      .value("adaptive", DropSchedule::adaptive)
      .value("fixed", DropSchedule::fixed);
  py::enum_<ChannelMode>(m, "ChannelMode")
      .value("random_subset", ChannelMode::random_subset)
      .value("prefix", ChannelMode::prefix);
  py::enum_<CountMode>(m, "CountMode")
      .value("fixed_count", CountMode::fixed_count)
      .value("bernoulli", CountMode::bernoulli);

  // network
  py::class_<Network>(m, "Network")
      .def(py::init(&build_network), py::arg("spec"))
      .def_static(
          "architecture",
          [](const std::string& arch, const Shape& sample_shape, std::size_t num_classes) {
            return build_architecture(arch, sample_shape, num_classes);
          },
          py::arg("arch"), py::arg("sample_shape"), py::arg("num_classes"))
      .def("__len__", &Network::size)
      .def("describe", &Network::describe)
      .def("__repr__", [](const Network& n) { return "Network('" + n.describe() + "')"; })
      .def("initialize", &initialize_network, py::arg("seed"))
      .def(
          "forward",
          [](Network& net, const Array& x, bool train, std::uint64_t seed) {
            const Mode saved = net.mode();
            net.set_mode(train ? Mode::train : Mode::eval);
            Rng rng(seed, Stream::dropout);
            Tensor out = net.forward(to_tensor(x), &rng);
            net.clear_cache();
            net.set_mode(saved);
            return to_array(out);
          },
          py::arg("x"), py::arg("train") = false, py::arg("seed") = 0)
      .def("parameter_names",
           [](const Network& net) {
             std::vector<std::string> names;
             for (std::size_t i = 0; i < net.size(); ++i)
               for (const auto* p : net.layer(i).params()) names.push_back(std::to_string(i) + "." + p->name);
             return names;
           })
      .def("parameters",
           [](const Network& net) {
             py::list out;
             for (const auto* p : net.params()) out.append(to_array(p->values));
             return out;
           })
      .def("set_parameter",
           [](Network& net, std::size_t index, const Array& values) {
             auto params = net.mutable_params();
             if (index >= params.size()) throw py::index_error("parameter index out of range");
             Tensor t = to_tensor(values);
             if (t.shape() != params[index]->values.shape())
               throw DimensionError("set_parameter: expected " + shape_str(params[index]->values.shape()) + ", got " +
                                    shape_str(t.shape()));
             params[index]->values = std::move(t);
           })
      .def("droppable_layers", &droppable_layer_indices)
      .def("channel_count", [](Network& net, std::size_t i) { return net.layer(i).channel_count(); })
      .def("with_dropout", &with_dropout, py::arg("keep_prob") = 0.7)
      .def("digest", &parameter_digest)
      .def("copy", [](const Network& n) { return Network(n); });

  // data
  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("inputs"), py::arg("labels"), py::arg("num_classes") = 0)
      .def_property_readonly("inputs", [](const Dataset& d) { return to_array(d.inputs); })
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_property_readonly("sample_shape", &Dataset::sample_shape)
      .def("__len__", &Dataset::size)
      .def("reshaped", &Dataset::reshaped);
  m.def("gen_blobs", &gen_blobs, py::arg("n_per_class"), py::arg("num_classes"), py::arg("dim"),
        py::arg("spread"), py::arg("seed"));
  m.def("load_idx", &load_idx, py::arg("images"), py::arg("labels"));
  m.def("save_idx", &save_idx, py::arg("dataset"), py::arg("images"), py::arg("labels"));
  m.def("load_csv", &load_csv, py::arg("path"), py::arg("num_classes") = 0);
  m.def("save_csv", &save_csv, py::arg("dataset"), py::arg("path"));
  m.def(
      "load_dataset",
      [](const std::string& spec, const std::string& test_spec, std::uint64_t seed) {
        DataSplit s = load_dataset(spec, test_spec, seed);
        return py::make_tuple(std::move(s.train), std::move(s.test));
      },
      py::arg("spec"), py::arg("test_spec") = "", py::arg("seed") = 0, "(train, test)");

  // policy and schedule
  py::class_<DropPolicy>(m, "DropPolicy")
      .def(py::init<>())
      .def_readwrite("layer_drop_rate", &DropPolicy::layer_drop_rate)
      .def_readwrite("channel_drop_rate", &DropPolicy::channel_drop_rate)
      .def_readwrite("skip_first_n", &DropPolicy::skip_first_n)
      .def_readwrite("channel_mode", &DropPolicy::channel_mode)
      .def_readwrite("count_mode", &DropPolicy::count_mode)
      .def("validate", &DropPolicy::validate);
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr0", &TrainConfig::lr0)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("lr_milestone_fractions", &TrainConfig::lr_milestone_fractions)
      .def_readwrite("lr_gamma", &TrainConfig::lr_gamma)
      .def_readwrite("drop_rate_initial", &TrainConfig::drop_rate_initial)
      .def_readwrite("drop_rate_final", &TrainConfig::drop_rate_final)
      .def_readwrite("channel_drop_rate", &TrainConfig::channel_drop_rate)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("validate", &TrainConfig::validate);
  m.def("milestone_epochs", &milestone_epochs);
  m.def("lr_at_epoch", &lr_at_epoch);
  m.def("layer_drop_rate_at_epoch", &layer_drop_rate_at_epoch);
  m.def("scheduled_layer_drop_rate", &scheduled_layer_drop_rate);
  m.def("drop_count", &drop_count);
  m.def(
      "select_channels",
      [](std::size_t count, const DropPolicy& policy, std::uint64_t seed) {
        Rng rng(seed);
        return select_channels(count, policy, rng);
      },
      py::arg("channel_count"), py::arg("policy"), py::arg("seed"), "update mask: True = apply, False = freeze");
  m.def(
      "make_drop_decision",
      [](const Network& net, const DropPolicy& policy, std::uint64_t seed) {
        Rng rng(seed);
        DropDecision d = make_drop_decision(net, policy, rng);
        return py::make_tuple(d.selected_layer, d.update_mask);
      },
      py::arg("net"), py::arg("policy"), py::arg("seed"), "(selected layer or None, update mask)");

  // training
  m.def(
      "run_training",
      [](const TrainConfig& cfg, const DropPolicy& policy, Network& net, const Dataset& train, const Dataset& test,
         DropSchedule schedule, std::optional<double> layer_drop_rate, std::size_t start_epoch) {
        RunOptions opts;
        opts.schedule = schedule;
        opts.layer_drop_rate_override = layer_drop_rate;
        opts.start_epoch = start_epoch;
        std::vector<MetricsRecord> records;
        {
          py::gil_scoped_release release;
          records = run_training(cfg, policy, net, train, test, opts);
        }
        return metrics_list(records);
      },
      py::arg("config"), py::arg("policy"), py::arg("net"), py::arg("train"), py::arg("test"),
      py::arg("schedule") = DropSchedule::adaptive, py::arg("layer_drop_rate") = py::none(),
      py::arg("start_epoch") = 0, "trains net in place; returns one metrics dict per epoch");
  m.def(
      "evaluate",
      [](Network& net, const Dataset& ds) {
        const Evaluation e = evaluate(net, ds);
        return py::make_tuple(e.loss, e.accuracy);
      },
      "(loss, accuracy)");
  m.def(
      "gradcheck",
      [](std::size_t trials, double epsilon, double tolerance, std::uint64_t seed, const std::string& net_spec) {
        const GradcheckReport r =
            gradcheck_run({.trials = trials, .epsilon = epsilon, .tolerance = tolerance, .seed = seed, .net_spec = net_spec});
        py::list trials_out;
        for (const auto& t : r.trials)
          trials_out.append(py::dict(py::arg("topology") = t.topology, py::arg("checked") = t.checked,
                                     py::arg("max_rel_error") = t.max_rel_error,
                                     py::arg("worst_param") = t.worst_param));
        return py::dict(py::arg("passed") = r.passed, py::arg("max_rel_error") = r.max_rel_error,
                        py::arg("trials") = trials_out);
      },
      py::arg("trials") = 20, py::arg("epsilon") = 1e-5, py::arg("tolerance") = 1e-5, py::arg("seed") = 0,
      py::arg("net_spec") = "");
  m.def(
      "compare",
      [](const TrainConfig& cfg, const DropPolicy& policy, const Network& initial,
         const std::vector<std::string>& names, const Dataset& train, const Dataset& test, double keep_prob) {
        std::vector<Variant> variants;
        for (const auto& n : names) variants.push_back(parse_variant(n));
        if (variants.empty()) variants = all_variants();
        std::vector<ComparisonRow> rows;
        {
          py::gil_scoped_release release;
          rows = compare_run(cfg, policy, initial, variants, train, test, keep_prob);
        }
        py::list out;
        for (const auto& r : rows)
          out.append(py::dict(py::arg("variant") = std::string(to_string(r.variant)),
                              py::arg("final_test_accuracy") = r.final_test_accuracy,
                              py::arg("mean_epoch_time_seconds") = r.mean_epoch_time_seconds,
                              py::arg("init_digest") = r.init_digest, py::arg("metrics") = metrics_list(r.metrics)));
        return out;
      },
      py::arg("config"), py::arg("policy"), py::arg("initial"), py::arg("variants"), py::arg("train"),
      py::arg("test"), py::arg("dropout_keep_prob") = 0.7);
  m.def(
      "sweep",
      [](const TrainConfig& cfg, const DropPolicy& policy, const Network& initial, const std::vector<double>& rates,
         const Dataset& train, const Dataset& test, DropSchedule schedule) {
        std::vector<SweepRow> rows;
        {
          py::gil_scoped_release release;
          rows = sweep_channel_rate(cfg, policy, initial, rates, train, test, schedule);
        }
        std::vector<std::pair<double, double>> out;
        for (const auto& r : rows) out.emplace_back(r.rate, r.final_test_accuracy);
        return out;
      },
      py::arg("config"), py::arg("policy"), py::arg("initial"), py::arg("rates"), py::arg("train"),
      py::arg("test"), py::arg("schedule") = DropSchedule::adaptive, "[(rate, final test accuracy)]");

  // checkpoints
  m.def("encode_checkpoint", [](const Network& net) { return py::bytes(encode_checkpoint(net)); });
  m.def("decode_checkpoint", [](const py::bytes& b) { return decode_checkpoint(std::string_view(b)); });
  m.def("save_checkpoint", &save_checkpoint, py::arg("net"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
}
