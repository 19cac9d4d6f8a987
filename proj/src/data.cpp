// SPDX-License-Identifier: Apache-2.0
#include "cdb/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "cdb/errors.hpp"
#include "cdb/rng.hpp"

namespace cdb {

Shape Dataset::sample_shape() const {
  const auto& s = inputs.shape();
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (inputs.empty() || inputs.dim(0) != labels.size())
    throw InputError("dataset has " + std::to_string(labels.size()) + " labels but inputs " +
                     shape_str(inputs.shape()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw InputError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) + " outside [0," +
                       std::to_string(num_classes) + ")");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InputError("empty subset");
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  Dataset out{Tensor(shape), {}, num_classes};
  const std::size_t slice = inputs.slice_size();
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw InputError("subset index " + std::to_string(src) + " out of range");
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(src * slice), slice,
                out.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * slice));
    out.labels.push_back(labels[src]);
  }
  return out;
}

Dataset Dataset::reshaped(const Shape& sample_shape) const {
  Shape shape{size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Dataset{inputs.reshaped(shape), labels, num_classes};
}

// ---------------------------------------------------------------- IDX

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& p) {
  if (offset + 4 > bytes.size()) throw FormatError(p.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lbl = read_file(labels_path);

  const auto img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImages)
    throw FormatError(images_path.string() + ": bad IDX image magic " + hex(img_magic));
  const auto lbl_magic = read_be32(lbl, 0, labels_path);
  if (lbl_magic != kIdxLabels)
    throw FormatError(labels_path.string() + ": bad IDX label magic " + hex(lbl_magic));

  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lbl, 4, labels_path);
  if (n != n_labels)
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                      " labels");
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty IDX image file");
  if (img.size() != 16 + n * rows * cols)
    throw FormatError(images_path.string() + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, got " +
                      std::to_string(img.size()));
  if (lbl.size() != 8 + n) throw FormatError(labels_path.string() + ": expected " + std::to_string(8 + n) + " bytes");

  Dataset ds{Tensor({n, 1, rows, cols}), std::vector<int>(n), 0};
  for (std::size_t i = 0; i < n * rows * cols; ++i) ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lbl[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  ds.validate();
  const auto& s = ds.inputs.shape();
  if (s.size() != 4 || s[1] != 1) throw InputError("save_idx needs N x 1 x H x W images, got " + shape_str(s));
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lbl(labels_path, std::ios::binary);
  if (!img || !lbl) throw InputError("cannot write IDX files");
  write_be32(img, kIdxImages);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  for (double v : ds.inputs.data()) {
    const double b = std::clamp(std::round(v * 255.0), 0.0, 255.0);
    img.put(static_cast<char>(static_cast<unsigned char>(b)));
  }
  write_be32(lbl, kIdxLabels);
  write_be32(lbl, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) {
    if (l > 255) throw InputError("IDX labels must fit in one byte");
    lbl.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
}

// ---------------------------------------------------------------- CSV

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      std::string_view cell(line.data() + start, (comma == std::string::npos ? line.size() : comma) - start);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" + std::string(cell) +
                          "'");
      if (count == 0) {
        if (v < 0 || v != std::floor(v))
          throw FormatError(path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
        labels.push_back(static_cast<int>(v));
      } else {
        features.push_back(v);
      }
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (count < 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": row has no features");
    if (width == 0) width = count;
    if (count != width)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " cells, got " + std::to_string(count));
  }
  if (labels.empty()) throw InputError(path.string() + ": no rows");
  const int max_label = *std::max_element(labels.begin(), labels.end());
  if (num_classes == 0) num_classes = static_cast<std::size_t>(max_label) + 1;
  Dataset ds{Tensor({labels.size(), width - 1}, std::move(features)), std::move(labels), num_classes};
  ds.validate();
  return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  const std::size_t d = ds.inputs.slice_size();
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.inputs[i * d + j]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------- blobs

Dataset gen_blobs(std::size_t n_per_class, std::size_t num_classes, std::size_t dim, double spread, std::uint64_t seed) {
  if (n_per_class == 0 || num_classes == 0 || dim == 0) throw InputError("gen_blobs arguments must be positive");
  if (dim < num_classes)
    throw InputError("gen_blobs needs dim >= num_classes for distinct simplex centres (dim " + std::to_string(dim) +
                     ", classes " + std::to_string(num_classes) + ")");
  if (!(spread >= 0.0)) throw InputError("gen_blobs spread must be non-negative");
  const std::size_t n = n_per_class * num_classes;
  Dataset ds{Tensor({n, dim}), std::vector<int>(n), num_classes};
  Rng rng(seed, Stream::data);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) ds.inputs[i * dim + j] = (j == c ? 4.0 : 0.0) + spread * rng.normal();
  }
  return ds;
}

// ---------------------------------------------------------------- batches

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::size_t epoch, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), permutation_(ds.size()) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::iota(permutation_.begin(), permutation_.end(), std::size_t{0});
  Rng rng(seed, Stream::shuffle, epoch);
  // Fisher-Yates
  for (std::size_t i = permutation_.size(); i > 1; --i) std::swap(permutation_[i - 1], permutation_[rng.index(i)]);
}

std::size_t BatchIterator::batch_count() const { return (permutation_.size() + batch_size_ - 1) / batch_size_; }

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= permutation_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + batch_size_, permutation_.size());
  std::span<const std::size_t> idx(permutation_.data() + cursor_, end - cursor_);
  cursor_ = end;
  Dataset sub = ds_->subset(idx);
  return Batch{std::move(sub.inputs), std::move(sub.labels), {idx.begin(), idx.end()}};
}

BatchIterator batches(const Dataset& ds, std::size_t batch_size, std::size_t epoch, std::uint64_t seed) {
  return BatchIterator(ds, batch_size, epoch, seed);
}

}  // namespace cdb
