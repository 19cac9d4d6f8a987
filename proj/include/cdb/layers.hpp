// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdb/rng.hpp"
#include "cdb/tensor.hpp"

namespace cdb {

enum class LayerKind { dense, conv2d, relu, flatten, avgpool2d, residual_block, dropout };
enum class Mode { train, eval };

std::string_view to_string(LayerKind kind);

/// Trainable tensor with its gradient and momentum buffers. Axis 0 is the
/// channel (conv output channel) or row (dense output feature) axis along
/// which updates can be dropped.
struct ParamTensor {
  ParamTensor(std::string name, Shape shape, bool droppable = true);

  std::string name;
  Tensor values;
  Tensor grad;
  Tensor momentum;
  bool droppable = true;

  std::size_t channel_count() const { return values.dim(0); }
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  /// Round-trippable description, e.g. "conv:3,8,3,1,1".
  virtual std::string spec() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// In train mode caches whatever backward needs; in eval mode caches nothing.
  virtual Tensor forward(const Tensor& x, Mode mode, Rng* rng) = 0;
  /// Writes parameter gradients and returns the gradient w.r.t. the input.
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<ParamTensor*> mutable_params() { return {}; }
  std::vector<const ParamTensor*> params() const;

  /// Length of the drop axis (output channels/rows); 0 for parameter-free layers.
  virtual std::size_t channel_count() const { return 0; }
  virtual void initialize(Rng& /*rng*/) {}
  virtual void clear_cache() = 0;

  bool droppable() const;
};

class Dense final : public Layer {
 public:
  Dense(std::size_t in_features, std::size_t out_features);

  LayerKind kind() const override { return LayerKind::dense; }
  std::string spec() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamTensor*> mutable_params() override { return {&weight_, &bias_}; }
  std::size_t channel_count() const override { return weight_.values.dim(0); }
  void initialize(Rng& rng) override;
  void clear_cache() override { input_ = Tensor(); }

  ParamTensor& weight() { return weight_; }
  ParamTensor& bias() { return bias_; }

 private:
  ParamTensor weight_;  // [out x in]
  ParamTensor bias_;    // [out]
  Tensor input_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
         std::size_t padding = 0);

  LayerKind kind() const override { return LayerKind::conv2d; }
  std::string spec() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamTensor*> mutable_params() override { return {&weight_, &bias_}; }
  std::size_t channel_count() const override { return weight_.values.dim(0); }
  void initialize(Rng& rng) override;
  void clear_cache() override { input_ = Tensor(); }

  ParamTensor& weight() { return weight_; }
  ParamTensor& bias() { return bias_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }

 private:
  ParamTensor weight_;  // [cout x cin x k x k]
  ParamTensor bias_;    // [cout]
  std::size_t stride_;
  std::size_t padding_;
  Tensor input_;
};

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  std::string spec() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void clear_cache() override { input_ = Tensor(); }

 private:
  Tensor input_;
};

/// N x ... -> N x prod(...)
class Flatten final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  std::string spec() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void clear_cache() override { input_shape_.clear(); }

 private:
  Shape input_shape_;
};

/// Non-overlapping average pooling (window = stride = kernel); trailing
/// rows/columns that do not fill a window are ignored.
class AvgPool2d final : public Layer {
 public:
  explicit AvgPool2d(std::size_t kernel);

  LayerKind kind() const override { return LayerKind::avgpool2d; }
  std::string spec() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2d>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void clear_cache() override { input_shape_.clear(); }

 private:
  std::size_t kernel_;
  Shape input_shape_;
};

/// out = relu(conv2(relu(conv1(x))) + skip(x)), 3x3 convolutions with
/// padding 1. The skip is the identity when the shape is preserved and a
/// strided 1x1 projection otherwise. Selected for dropping as one unit.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride = 1);

  LayerKind kind() const override { return LayerKind::residual_block; }
  std::string spec() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamTensor*> mutable_params() override;
  std::size_t channel_count() const override { return conv2_.channel_count(); }
  void initialize(Rng& rng) override;
  void clear_cache() override;

  Conv2d& conv1() { return conv1_; }
  Conv2d& conv2() { return conv2_; }
  Conv2d* projection() { return projection_ ? &*projection_ : nullptr; }

 private:
  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t stride_;
  Conv2d conv1_;
  Relu relu1_;
  Conv2d conv2_;
  std::optional<Conv2d> projection_;
  Tensor sum_;  // pre-activation of the output relu
};

/// Inverted dropout: in train mode keeps each element with probability
/// keep_prob and scales kept elements by 1/keep_prob; identity in eval mode.
class Dropout final : public Layer {
 public:
  explicit Dropout(double keep_prob);

  LayerKind kind() const override { return LayerKind::dropout; }
  std::string spec() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void clear_cache() override { mask_ = Tensor(); }

  double keep_prob() const { return keep_prob_; }

 private:
  double keep_prob_;
  Tensor mask_;  // 0 or 1/keep_prob per element
};

/// Ordered stack of layers.
class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  template <class L, class... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  /// Runs every layer in order. rng feeds dropout layers and is only
  /// required in train mode when the network contains dropout.
  Tensor forward(const Tensor& input, Rng* rng = nullptr);
  /// Back-propagates dL/dlogits, leaving the full (unmasked) gradient in
  /// every ParamTensor::grad.
  void backward(const Tensor& grad_logits);

  std::vector<ParamTensor*> mutable_params();
  std::vector<const ParamTensor*> params() const;

  /// Kaiming-uniform (fan-in) weights, zero biases, in layer order.
  void initialize(Rng& rng);
  void clear_cache();
  void zero_grads();

  /// Topology descriptor: layer specs joined by ';'.
  std::string describe() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  Mode mode_ = Mode::train;
  bool has_cache_ = false;
};

/// Indices of layers that own at least one droppable parameter, in order.
std::vector<std::size_t> droppable_layer_indices(const Network& net);

/// Parses a topology descriptor such as "conv:1,8,3,1,1;relu;flatten;dense:512,10".
Network build_network(std::string_view spec);

/// Named architectures sized from the input sample shape (without the batch
/// axis): "mlp" (rank-1 inputs), "cnn" and "resnet" (C x H x W inputs).
/// Anything else is parsed with build_network.
Network build_architecture(std::string_view arch, const Shape& sample_shape, std::size_t num_classes);

/// Copy of net with a Dropout(keep_prob) inserted after every ReLU layer.
/// Parameters are unchanged, so both networks initialize identically.
Network with_dropout(const Network& net, double keep_prob);

}  // namespace cdb
