// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

#include "cdb/config.hpp"
#include "cdb/data.hpp"
#include "cdb/errors.hpp"
#include "scratch.hpp"

using namespace cdb;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// 3 images of 2x2, labels 0 2 1
std::vector<unsigned char> idx_images() {
  return {0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2,
          0, 255, 51, 102,  //
          1, 2, 3, 4,       //
          255, 255, 0, 0};
}
std::vector<unsigned char> idx_labels(unsigned char n = 3) { return {0, 0, 8, 1, 0, 0, 0, n, 0, 2, 1}; }

}  // namespace

TEST_CASE("IDX loading") {
  test::ScratchDir dir("idx");
  const auto img = dir / "img.idx", lbl = dir / "lbl.idx";
  write_bytes(img, idx_images());
  SUBCASE("hand-built fixture") {
    write_bytes(lbl, idx_labels());
    const Dataset ds = load_idx(img, lbl);
    CHECK(ds.inputs.shape() == Shape{3, 1, 2, 2});
    CHECK(ds.labels == std::vector<int>{0, 2, 1});
    CHECK(ds.num_classes == 3);
    CHECK(ds.inputs[0] == 0.0);
    CHECK(ds.inputs[1] == 1.0);
    CHECK(ds.inputs[2] == 51.0 / 255.0);
    CHECK(ds.inputs[5] == 2.0 / 255.0);
  }
  SUBCASE("round trip") {
    write_bytes(lbl, idx_labels());
    const Dataset ds = load_idx(img, lbl);
    save_idx(ds, dir / "img2.idx", dir / "lbl2.idx");
    const Dataset back = load_idx(dir / "img2.idx", dir / "lbl2.idx");
    CHECK(bit_equal(back.inputs, ds.inputs));
    CHECK(back.labels == ds.labels);
  }
  SUBCASE("bad magic") {
    auto bytes = idx_images();
    bytes[3] = 4;
    write_bytes(img, bytes);
    write_bytes(lbl, idx_labels());
    CHECK_THROWS_AS(load_idx(img, lbl), FormatError);
    CHECK_THROWS_AS(load_idx(lbl, lbl), FormatError);
  }
  SUBCASE("count mismatch") {
    auto labels = idx_labels(4);
    labels.push_back(0);
    write_bytes(lbl, labels);
    CHECK_THROWS_AS(load_idx(img, lbl), FormatError);
  }
  SUBCASE("truncated payload") {
    auto bytes = idx_images();
    bytes.pop_back();
    write_bytes(img, bytes);
    write_bytes(lbl, idx_labels());
    CHECK_THROWS_AS(load_idx(img, lbl), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_idx(dir / "nope", lbl), InputError); }
}

TEST_CASE("CSV loading") {
  test::ScratchDir dir("csv");
  const auto p = dir / "d.csv";
  SUBCASE("label then features") {
    write_text(p, "1,0.5,-2\n0, 3 ,4e-1\r\n\n2,1,1\n");
    const Dataset ds = load_csv(p);
    CHECK(ds.inputs == Tensor({3, 2}, {0.5, -2, 3, 0.4, 1, 1}));
    CHECK(ds.labels == std::vector<int>{1, 0, 2});
    CHECK(ds.num_classes == 3);
    CHECK(load_csv(p, 5).num_classes == 5);
    CHECK_THROWS_AS(load_csv(p, 2), InputError);
  }
  SUBCASE("round trip is exact") {
    Dataset ds = gen_blobs(4, 2, 3, 0.7, 9);
    save_csv(ds, p);
    const Dataset back = load_csv(p);
    CHECK(bit_equal(back.inputs, ds.inputs));
    CHECK(back.labels == ds.labels);
  }
  SUBCASE("errors carry the line number") {
    write_text(p, "0,1,2\n1,x,2\n");
    try {
      load_csv(p);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    write_text(p, "0,1,2\n1,2\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
    write_text(p, "0.5,1\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
    write_text(p, "1\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
    write_text(p, "\n\n");
    CHECK_THROWS_AS(load_csv(p), InputError);
  }
}

TEST_CASE("gen_blobs") {
  SUBCASE("deterministic per seed") {
    CHECK(bit_equal(gen_blobs(10, 3, 8, 0.5, 1).inputs, gen_blobs(10, 3, 8, 0.5, 1).inputs));
    CHECK_FALSE(bit_equal(gen_blobs(10, 3, 8, 0.5, 1).inputs, gen_blobs(10, 3, 8, 0.5, 2).inputs));
  }
  SUBCASE("zero spread puts every sample on its centre") {
    const Dataset ds = gen_blobs(5, 3, 4, 0.0, 3);
    CHECK(ds.size() == 15);
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(ds.inputs.at(i, j) == (static_cast<int>(j) == ds.labels[i] ? 4.0 : 0.0));
  }
  SUBCASE("small spread is separable by nearest centre") {
    const Dataset ds = gen_blobs(100, 3, 8, 0.5, 4);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      int best = 0;
      double best_d = 1e300;
      for (int c = 0; c < 3; ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
          const double diff = ds.inputs.at(i, j) - (static_cast<int>(j) == c ? 4.0 : 0.0);
          d += diff * diff;
        }
        if (d < best_d) best_d = d, best = c;
      }
      correct += best == ds.labels[i];
    }
    CHECK(correct >= 297);
  }
  SUBCASE("sample spread matches") {
    const Dataset ds = gen_blobs(2000, 2, 2, 0.5, 5);
    double s2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == 0) s2 += ds.inputs.at(i, 1) * ds.inputs.at(i, 1), ++n;
    CHECK(std::sqrt(s2 / static_cast<double>(n)) == doctest::Approx(0.5).epsilon(0.05));
  }
  SUBCASE("invalid arguments") {
    CHECK_THROWS_AS(gen_blobs(0, 3, 8, 0.5, 0), InputError);
    CHECK_THROWS_AS(gen_blobs(5, 4, 3, 0.5, 0), InputError);
    CHECK_THROWS_AS(gen_blobs(5, 2, 3, -1.0, 0), InputError);
  }
}

TEST_CASE("batches") {
  const Dataset ds = gen_blobs(7, 3, 3, 1.0, 6);
  SUBCASE("one epoch partitions the indices") {
    auto it = batches(ds, 4, 0, 11);
    CHECK(it.batch_count() == 6);
    std::vector<std::size_t> seen;
    std::size_t count = 0;
    while (auto b = it.next()) {
      ++count;
      CHECK(b->labels.size() == b->indices.size());
      CHECK(b->inputs.dim(0) == b->indices.size());
      for (std::size_t k = 0; k < b->indices.size(); ++k) {
        CHECK(b->labels[k] == ds.labels[b->indices[k]]);
        CHECK(b->inputs.at(k, 2) == ds.inputs.at(b->indices[k], 2));
      }
      seen.insert(seen.end(), b->indices.begin(), b->indices.end());
    }
    CHECK(count == 6);
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(seen == all);
  }
  SUBCASE("order depends only on seed and epoch") {
    CHECK(batches(ds, 4, 2, 11).permutation() == batches(ds, 5, 2, 11).permutation());
    CHECK(batches(ds, 4, 2, 11).permutation() != batches(ds, 4, 3, 11).permutation());
    CHECK(batches(ds, 4, 2, 11).permutation() != batches(ds, 4, 2, 12).permutation());
  }
  SUBCASE("batch size larger than the dataset") {
    auto it = batches(ds, 100, 0, 0);
    CHECK(it.next()->labels.size() == ds.size());
    CHECK_FALSE(it.next().has_value());
  }
  CHECK_THROWS_AS(batches(ds, 0, 0, 0), ConfigError);
}

TEST_CASE("dataset specs") {
  SUBCASE("blobs train and test are independent draws") {
    const DataSplit s = load_dataset("blobs:10,3,4,0.5", "", 3);
    CHECK(s.train.size() == 30);
    CHECK(s.test.size() == 30);
    CHECK_FALSE(bit_equal(s.train.inputs, s.test.inputs));
  }
  SUBCASE("blobs reshaped to images") {
    const DataSplit s = load_dataset("blobs:2,3,16,0.5,1x4x4", "", 0);
    CHECK(s.train.sample_shape() == Shape{1, 4, 4});
  }
  SUBCASE("csv without a test spec is split every fifth sample") {
    test::ScratchDir dir("spec");
    save_csv(gen_blobs(5, 2, 2, 1.0, 0), dir / "a.csv");
    const DataSplit s = load_dataset("csv:" + (dir / "a.csv").string(), "", 0);
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);
  }
  CHECK_THROWS_AS(load_dataset("blobs:1,2", "", 0), ConfigError);
  CHECK_THROWS_AS(load_dataset("parquet:x", "", 0), ConfigError);
  CHECK_THROWS_AS(load_dataset("blobs:4,2,4,0.5", "blobs:4,2,5,0.5", 0), InputError);
}
