// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cdb {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A default-constructed tensor is "empty" (no shape, no data) and is only
/// used as a placeholder for caches; every other tensor has rank >= 1 and
/// strictly positive extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(double value);
  Tensor reshaped(Shape shape) const;

  /// Number of elements in one slice along axis 0.
  std::size_t slice_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// True iff shapes match and every element has the identical bit pattern.
bool bit_equal(const Tensor& a, const Tensor& b);

/// Largest |a[i] - b[i]|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);

/// Output extent of a convolution along one spatial axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Cross-correlation of an N x Cin x H x W input with a Cout x Cin x kh x kw
/// kernel, zero padding, no bias.
Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding);

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_weight;
};

ConvGrads conv2d_grads(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                       std::size_t stride, std::size_t padding);

/// max(x, 0); NaN stays NaN.
Tensor relu(const Tensor& x);
/// Passes grad_out where x > 0; zero at and below 0.
Tensor relu_grad(const Tensor& x, const Tensor& grad_out);

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Index of the largest entry in each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace cdb
