// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cdb/tensor.hpp"

namespace cdb {

struct Dataset {
  Tensor inputs;            // N x ...
  std::vector<int> labels;  // length N, each in [0, num_classes)
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  /// Shape of one sample (inputs shape without the leading N).
  Shape sample_shape() const;
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset reshaped(const Shape& sample_shape) const;
};

/// Reads an IDX image file (magic 0x00000803, N x H x W unsigned bytes) and
/// an IDX label file (magic 0x00000801). Pixels are scaled by 1/255 and the
/// images shaped N x 1 x H x W. num_classes is max(label) + 1.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes the inverse of load_idx; pixels are round(255 * x) clamped to [0,255].
void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Each row: label, feature... ; no header, no normalization. num_classes = 0
/// infers max(label) + 1.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes = 0);

void save_csv(const Dataset& ds, const std::filesystem::path& path);

/// Gaussian blobs: class c centred at 4 * e_c in R^dim (requires dim >= num_classes)
/// with isotropic noise of standard deviation `spread`. Samples are
/// interleaved by class.
Dataset gen_blobs(std::size_t n_per_class, std::size_t num_classes, std::size_t dim, double spread, std::uint64_t seed);

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Walks one epoch of a dataset in a permutation derived from (seed, epoch).
/// The last batch may be short.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::size_t epoch, std::uint64_t seed);

  std::optional<Batch> next();
  std::size_t batch_count() const;
  const std::vector<std::size_t>& permutation() const { return permutation_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> permutation_;
  std::size_t cursor_ = 0;
};

BatchIterator batches(const Dataset& ds, std::size_t batch_size, std::size_t epoch, std::uint64_t seed);

}  // namespace cdb
