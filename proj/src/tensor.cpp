// SPDX-License-Identifier: Apache-2.0
#include "cdb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cdb/errors.hpp"

namespace cdb {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

namespace {

// out[m x n] = a[m x k] * b[k x n], raw row-major buffers; out is overwritten.
void gemm(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out, out + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
void gemm_bt_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out[i * n + j] += s;
    }
  }
}

// out[k x n] = a[m x k]^T * b[m x n]
void gemm_at(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out, out + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow, stride, pad;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (input.dim(1) != weight.dim(1))
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(input.dim(1)) +
                         " channels but weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)));
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding)
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(input.shape()) + " (padding " + std::to_string(padding) + ")");
  g.oh = conv_out_extent(g.h, g.kh, stride, padding);
  g.ow = conv_out_extent(g.w, g.kw, stride, padding);
  return g;
}

// Unfolds one sample into cols[patch x positions].
void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            row[oy * g.ow + ox] = inside ? img[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
}

void col2im_acc(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * positions;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor out({a.dim(0), b.dim(1)});
  gemm(a.data().data(), b.data().data(), out.data().data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  Tensor out({g.n, g.cout, g.oh, g.ow});
  std::vector<double> cols(g.patch() * g.positions());
  const std::size_t in_sample = g.cin * g.h * g.w;
  const std::size_t out_sample = g.cout * g.positions();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(input.data().data() + s * in_sample, g, cols.data());
    gemm(weight.data().data(), cols.data(), out.data().data() + s * out_sample, g.cout, g.patch(), g.positions());
  }
  return out;
}

ConvGrads conv2d_grads(const Tensor& input, const Tensor& weight, const Tensor& grad_out, std::size_t stride,
                       std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const Shape expected{g.n, g.cout, g.oh, g.ow};
  if (grad_out.shape() != expected)
    throw DimensionError("conv2d_grads: grad_out " + shape_str(grad_out.shape()) + " but forward output is " +
                         shape_str(expected));
  ConvGrads grads{Tensor(input.shape()), Tensor(weight.shape())};
  std::vector<double> cols(g.patch() * g.positions());
  std::vector<double> grad_cols(cols.size());
  const std::size_t in_sample = g.cin * g.h * g.w;
  const std::size_t out_sample = g.cout * g.positions();
  for (std::size_t s = 0; s < g.n; ++s) {
    const double* go = grad_out.data().data() + s * out_sample;
    im2col(input.data().data() + s * in_sample, g, cols.data());
    // dW[cout x patch] += dY[cout x pos] * cols[patch x pos]^T
    gemm_bt_acc(go, cols.data(), grads.grad_weight.data().data(), g.cout, g.positions(), g.patch());
    // dcols[patch x pos] = W[cout x patch]^T * dY[cout x pos]
    gemm_at(weight.data().data(), go, grad_cols.data(), g.cout, g.patch(), g.positions());
    col2im_acc(grad_cols.data(), g, grads.grad_input.data().data() + s * in_sample);
  }
  return grads;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = v <= 0.0 ? 0.0 : v;
  return out;
}

Tensor relu_grad(const Tensor& x, const Tensor& grad_out) {
  if (x.shape() != grad_out.shape())
    throw DimensionError("relu_grad: " + shape_str(x.shape()) + " vs " + shape_str(grad_out.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return out;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  LossAndGrad result{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw InputError("label " + std::to_string(label) + " at row " + std::to_string(i) + " outside [0," +
                       std::to_string(k) + ")");
    const double* row = logits.data().data() + i * k;
    double* grow = result.grad_logits.data().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      grow[j] = std::exp(row[j] - mx);
      sum += grow[j];
    }
    const double log_sum = std::log(sum);
    result.loss += (log_sum - (row[label] - mx)) * inv_n;
    for (std::size_t j = 0; j < k; ++j) grow[j] = (grow[j] / sum - (static_cast<std::size_t>(label) == j)) * inv_n;
  }
  return result;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    // max_element returns the first maximum
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace cdb
