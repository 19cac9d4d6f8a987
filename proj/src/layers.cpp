// SPDX-License-Identifier: Apache-2.0
#include "cdb/layers.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cdb/errors.hpp"

namespace cdb {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::residual_block: return "residual_block";
    case LayerKind::dropout: return "dropout";
  }
  return "unknown";
}

ParamTensor::ParamTensor(std::string name_, Shape shape, bool droppable_)
    : name(std::move(name_)), values(shape), grad(shape), momentum(shape), droppable(droppable_) {}

std::vector<const ParamTensor*> Layer::params() const {
  auto mut = const_cast<Layer*>(this)->mutable_params();
  return {mut.begin(), mut.end()};
}

bool Layer::droppable() const {
  for (const auto* p : params())
    if (p->droppable) return true;
  return false;
}

namespace {

void require_cache(const Tensor& cache, std::string_view kind) {
  if (cache.empty())
    throw StateError(std::string(kind) + " backward called without a cached train-mode forward pass");
}

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : weight_("weight", {out_features, in_features}), bias_("bias", {out_features}) {}

std::string Dense::spec() const {
  return "dense:" + std::to_string(weight_.values.dim(1)) + "," + std::to_string(weight_.values.dim(0));
}

Tensor Dense::forward(const Tensor& x, Mode mode, Rng*) {
  const std::size_t in = weight_.values.dim(1), out = weight_.values.dim(0);
  if (x.rank() != 2 || x.dim(1) != in)
    throw DimensionError("dense expects N x " + std::to_string(in) + " input, got " + shape_str(x.shape()));
  // y = x W^T + b
  Tensor y = matmul(x, transpose(weight_.values));
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bias_.values[j];
  if (mode == Mode::train)
    input_ = x;
  else
    input_ = Tensor();
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  require_cache(input_, "dense");
  const std::size_t out = weight_.values.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != input_.dim(0) || grad_out.dim(1) != out)
    throw DimensionError("dense backward: grad " + shape_str(grad_out.shape()) + " for input " +
                         shape_str(input_.shape()));
  weight_.grad = matmul(transpose(grad_out), input_);
  bias_.grad.fill(0.0);
  for (std::size_t i = 0; i < grad_out.dim(0); ++i)
    for (std::size_t j = 0; j < out; ++j) bias_.grad[j] += grad_out[i * out + j];
  return matmul(grad_out, weight_.values);
}

void Dense::initialize(Rng& rng) {
  kaiming_uniform(weight_.values, weight_.values.dim(1), rng);
  bias_.values.fill(0.0);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t padding)
    : weight_("weight", {out_channels, in_channels, kernel, kernel}),
      bias_("bias", {out_channels}),
      stride_(stride),
      padding_(padding) {
  if (stride == 0) throw ConfigError("conv stride must be >= 1");
}

std::string Conv2d::spec() const {
  const auto& s = weight_.values.shape();
  return "conv:" + std::to_string(s[1]) + "," + std::to_string(s[0]) + "," + std::to_string(s[2]) + "," +
         std::to_string(stride_) + "," + std::to_string(padding_);
}

Tensor Conv2d::forward(const Tensor& x, Mode mode, Rng*) {
  Tensor y = conv2d(x, weight_.values, stride_, padding_);
  const std::size_t cout = y.dim(1), plane = y.dim(2) * y.dim(3);
  for (std::size_t n = 0; n < y.dim(0); ++n)
    for (std::size_t c = 0; c < cout; ++c) {
      double* p = y.data().data() + (n * cout + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias_.values[c];
    }
  if (mode == Mode::train)
    input_ = x;
  else
    input_ = Tensor();
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  require_cache(input_, "conv2d");
  ConvGrads g = conv2d_grads(input_, weight_.values, grad_out, stride_, padding_);
  weight_.grad = std::move(g.grad_weight);
  const std::size_t cout = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
  bias_.grad.fill(0.0);
  for (std::size_t n = 0; n < grad_out.dim(0); ++n)
    for (std::size_t c = 0; c < cout; ++c) {
      const double* p = grad_out.data().data() + (n * cout + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      bias_.grad[c] += s;
    }
  return std::move(g.grad_input);
}

void Conv2d::initialize(Rng& rng) {
  const auto& s = weight_.values.shape();
  kaiming_uniform(weight_.values, s[1] * s[2] * s[3], rng);
  bias_.values.fill(0.0);
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x, Mode mode, Rng*) {
  input_ = mode == Mode::train ? x : Tensor();
  return relu(x);
}

Tensor Relu::backward(const Tensor& grad_out) {
  require_cache(input_, "relu");
  return relu_grad(input_, grad_out);
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, Mode mode, Rng*) {
  if (x.rank() < 2) throw DimensionError("flatten expects rank >= 2, got " + shape_str(x.shape()));
  if (mode == Mode::train)
    input_shape_ = x.shape();
  else
    input_shape_.clear();
  return x.reshaped({x.dim(0), x.slice_size()});
}

Tensor Flatten::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw StateError("flatten backward called without a cached forward pass");
  return grad_out.reshaped(input_shape_);
}

// ---------------------------------------------------------------- AvgPool2d

AvgPool2d::AvgPool2d(std::size_t kernel) : kernel_(kernel) {
  if (kernel == 0) throw ConfigError("avgpool kernel must be >= 1");
}

std::string AvgPool2d::spec() const { return "avgpool:" + std::to_string(kernel_); }

Tensor AvgPool2d::forward(const Tensor& x, Mode mode, Rng*) {
  if (x.rank() != 4 || x.dim(2) < kernel_ || x.dim(3) < kernel_)
    throw DimensionError("avgpool:" + std::to_string(kernel_) + " cannot pool input " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / kernel_, ow = w / kernel_;
  const double scale = 1.0 / static_cast<double>(kernel_ * kernel_);
  Tensor y({n, c, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double sum = 0.0;
          for (std::size_t a = 0; a < kernel_; ++a)
            for (std::size_t b = 0; b < kernel_; ++b) sum += x.at(s, ch, i * kernel_ + a, j * kernel_ + b);
          y.at(s, ch, i, j) = sum * scale;
        }
  if (mode == Mode::train)
    input_shape_ = x.shape();
  else
    input_shape_.clear();
  return y;
}

Tensor AvgPool2d::backward(const Tensor& grad_out) {
  if (input_shape_.empty()) throw StateError("avgpool backward called without a cached forward pass");
  Tensor gx(input_shape_);
  const std::size_t oh = input_shape_[2] / kernel_, ow = input_shape_[3] / kernel_;
  if (grad_out.shape() != Shape{input_shape_[0], input_shape_[1], oh, ow})
    throw DimensionError("avgpool backward: unexpected grad shape " + shape_str(grad_out.shape()));
  const double scale = 1.0 / static_cast<double>(kernel_ * kernel_);
  for (std::size_t s = 0; s < input_shape_[0]; ++s)
    for (std::size_t ch = 0; ch < input_shape_[1]; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double g = grad_out.at(s, ch, i, j) * scale;
          for (std::size_t a = 0; a < kernel_; ++a)
            for (std::size_t b = 0; b < kernel_; ++b) gx.at(s, ch, i * kernel_ + a, j * kernel_ + b) = g;
        }
  return gx;
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      stride_(stride),
      conv1_(in_channels, out_channels, 3, stride, 1),
      conv2_(out_channels, out_channels, 3, 1, 1) {
  if (in_channels != out_channels || stride != 1) projection_.emplace(in_channels, out_channels, 1, stride, 0);
  conv1_.weight().name = "conv1.weight";
  conv1_.bias().name = "conv1.bias";
  conv2_.weight().name = "conv2.weight";
  conv2_.bias().name = "conv2.bias";
  if (projection_) {
    projection_->weight().name = "skip.weight";
    projection_->bias().name = "skip.bias";
  }
}

std::string ResidualBlock::spec() const {
  return "res:" + std::to_string(in_channels_) + "," + std::to_string(out_channels_) + "," + std::to_string(stride_);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode, Rng* rng) {
  Tensor main = conv2_.forward(relu1_.forward(conv1_.forward(x, mode, rng), mode, rng), mode, rng);
  Tensor skip = projection_ ? projection_->forward(x, mode, rng) : x;
  if (main.shape() != skip.shape())
    throw DimensionError("residual block main path " + shape_str(main.shape()) + " does not match skip path " +
                         shape_str(skip.shape()));
  for (std::size_t i = 0; i < main.size(); ++i) main[i] += skip[i];
  Tensor out = relu(main);
  sum_ = mode == Mode::train ? std::move(main) : Tensor();
  return out;
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  require_cache(sum_, "residual_block");
  const Tensor g_sum = relu_grad(sum_, grad_out);
  Tensor gx = conv1_.backward(relu1_.backward(conv2_.backward(g_sum)));
  if (projection_) {
    const Tensor g_skip = projection_->backward(g_sum);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g_skip[i];
  } else {
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g_sum[i];
  }
  return gx;
}

std::vector<ParamTensor*> ResidualBlock::mutable_params() {
  std::vector<ParamTensor*> out{&conv1_.weight(), &conv1_.bias(), &conv2_.weight(), &conv2_.bias()};
  if (projection_) {
    out.push_back(&projection_->weight());
    out.push_back(&projection_->bias());
  }
  return out;
}

void ResidualBlock::initialize(Rng& rng) {
  conv1_.initialize(rng);
  conv2_.initialize(rng);
  if (projection_) projection_->initialize(rng);
}

void ResidualBlock::clear_cache() {
  conv1_.clear_cache();
  relu1_.clear_cache();
  conv2_.clear_cache();
  if (projection_) projection_->clear_cache();
  sum_ = Tensor();
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double keep_prob) : keep_prob_(keep_prob) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw ConfigError("dropout keep_prob must be in (0,1], got " + format_double(keep_prob));
}

std::string Dropout::spec() const { return "dropout:" + format_double(keep_prob_); }

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng* rng) {
  if (mode == Mode::eval) {
    mask_ = Tensor();
    return x;
  }
  if (rng == nullptr) throw StateError("train-mode dropout requires a random stream");
  mask_ = Tensor(x.shape());
  Tensor y(x.shape());
  const double scale = 1.0 / keep_prob_;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = rng->uniform() < keep_prob_;
    mask_[i] = keep ? scale : 0.0;
    y[i] = keep ? x[i] * scale : 0.0;
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  require_cache(mask_, "dropout");
  if (grad_out.shape() != mask_.shape())
    throw DimensionError("dropout backward: grad " + shape_str(grad_out.shape()) + " vs mask " +
                         shape_str(mask_.shape()));
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask_[i];
  return g;
}

// ---------------------------------------------------------------- Network

Network::Network(const Network& other) : mode_(other.mode_), has_cache_(other.has_cache_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Tensor Network::forward(const Tensor& input, Rng* rng) {
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      x = layers_[i]->forward(x, mode_, rng);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " (" + std::string(to_string(layers_[i]->kind())) +
                           "): " + e.what());
    }
  }
  has_cache_ = mode_ == Mode::train;
  return x;
}

void Network::backward(const Tensor& grad_logits) {
  if (!has_cache_) throw StateError("network backward requires a preceding train-mode forward pass");
  Tensor g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    try {
      g = layers_[i]->backward(g);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " (" + std::string(to_string(layers_[i]->kind())) +
                           "): " + e.what());
    }
  }
}

std::vector<ParamTensor*> Network::mutable_params() {
  std::vector<ParamTensor*> out;
  for (auto& l : layers_)
    for (auto* p : l->mutable_params()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> Network::params() const {
  std::vector<const ParamTensor*> out;
  for (const auto& l : layers_)
    for (const auto* p : std::as_const(*l).params()) out.push_back(p);
  return out;
}

void Network::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
  for (auto* p : mutable_params()) {
    p->grad.fill(0.0);
    p->momentum.fill(0.0);
  }
}

void Network::clear_cache() {
  for (auto& l : layers_) l->clear_cache();
  has_cache_ = false;
}

void Network::zero_grads() {
  for (auto* p : mutable_params()) p->grad.fill(0.0);
}

std::string Network::describe() const {
  std::string out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) out += ';';
    out += layers_[i]->spec();
  }
  return out;
}

std::vector<std::size_t> droppable_layer_indices(const Network& net) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < net.size(); ++i)
    if (net.layer(i).droppable()) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------- builders

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::size_t> parse_sizes(std::string_view args, std::string_view item) {
  std::vector<std::size_t> out;
  for (auto tok : split(args, ',')) {
    tok = trim(tok);
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw ConfigError("bad layer argument '" + std::string(tok) + "' in '" + std::string(item) + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

Network build_network(std::string_view spec) {
  Network net;
  for (auto item : split(spec, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const auto name = trim(item.substr(0, colon));
    const auto args = colon == std::string_view::npos ? std::string_view{} : item.substr(colon + 1);
    auto expect = [&](std::size_t lo, std::size_t hi) {
      auto v = parse_sizes(args, item);
      if (v.size() < lo || v.size() > hi)
        throw ConfigError("wrong number of arguments in layer '" + std::string(item) + "'");
      return v;
    };
    if (name == "dense") {
      auto v = expect(2, 2);
      net.emplace<Dense>(v[0], v[1]);
    } else if (name == "conv") {
      // conv:cin,cout,k[,stride[,pad]]
      auto v = expect(3, 5);
      net.emplace<Conv2d>(v[0], v[1], v[2], v.size() > 3 ? v[3] : 1, v.size() > 4 ? v[4] : 0);
    } else if (name == "relu") {
      net.emplace<Relu>();
    } else if (name == "flatten") {
      net.emplace<Flatten>();
    } else if (name == "avgpool") {
      net.emplace<AvgPool2d>(expect(1, 1)[0]);
    } else if (name == "res") {
      auto v = expect(2, 3);
      net.emplace<ResidualBlock>(v[0], v[1], v.size() > 2 ? v[2] : 1);
    } else if (name == "dropout") {
      const auto tok = std::string(trim(args));
      char* end = nullptr;
      const double keep = std::strtod(tok.c_str(), &end);
      if (tok.empty() || end != tok.c_str() + tok.size())
        throw ConfigError("bad dropout keep probability in '" + std::string(item) + "'");
      net.emplace<Dropout>(keep);
    } else {
      throw ConfigError("unknown layer '" + std::string(name) + "' in network spec");
    }
  }
  if (net.size() == 0) throw ConfigError("network spec '" + std::string(spec) + "' has no layers");
  return net;
}

Network build_architecture(std::string_view arch, const Shape& sample_shape, std::size_t num_classes) {
  std::ostringstream os;
  if (arch == "mlp") {
    if (sample_shape.size() != 1)
      throw ConfigError("mlp architecture needs flat samples, got " + shape_str(sample_shape));
    constexpr std::size_t width = 32;
    os << "dense:" << sample_shape[0] << ',' << width;
    for (int i = 0; i < 4; ++i) os << ";relu;dense:" << width << ',' << width;
    os << ";relu;dense:" << width << ',' << num_classes;
  } else if (arch == "cnn" || arch == "resnet") {
    if (sample_shape.size() != 3)
      throw ConfigError(std::string(arch) + " architecture needs C x H x W samples, got " + shape_str(sample_shape));
    const std::size_t c = sample_shape[0];
    std::size_t h = sample_shape[1], w = sample_shape[2];
    std::size_t channels = 0;
    if (arch == "cnn") {
      os << "conv:" << c << ",8,3,1,1;relu;conv:8,8,3,1,1;relu;conv:8,16,3,2,1;relu;"
         << "conv:16,16,3,1,1;relu;conv:16,16,3,1,1;relu;conv:16,16,3,1,1;relu";
      h = conv_out_extent(h, 3, 2, 1);
      w = conv_out_extent(w, 3, 2, 1);
      channels = 16;
    } else {
      os << "conv:" << c << ",8,3,1,1;relu;res:8,8,1;res:8,16,2;res:16,16,1;res:16,16,1;res:16,16,1";
      h = conv_out_extent(h, 3, 2, 1);
      w = conv_out_extent(w, 3, 2, 1);
      channels = 16;
    }
    if (h >= 2 && w >= 2) {
      os << ";avgpool:2";
      h /= 2;
      w /= 2;
    }
    os << ";flatten;dense:" << channels * h * w << ',' << num_classes;
  } else {
    return build_network(arch);
  }
  return build_network(os.str());
}

Network with_dropout(const Network& net, double keep_prob) {
  Network out;
  out.set_mode(net.mode());
  for (std::size_t i = 0; i < net.size(); ++i) {
    out.add(net.layer(i).clone());
    if (net.layer(i).kind() == LayerKind::relu) out.emplace<Dropout>(keep_prob);
  }
  return out;
}

}  // namespace cdb
