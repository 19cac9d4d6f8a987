// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cdb/errors.hpp"
#include "cdb/layers.hpp"
#include "oracles.hpp"

using namespace cdb;

namespace {

double network_loss(Network& net, const Tensor& x, const std::vector<int>& labels) {
  const Mode m = net.mode();
  net.set_mode(Mode::eval);
  const double loss = softmax_cross_entropy(net.forward(x), labels).loss;
  net.set_mode(m);
  return loss;
}

// Worst relative error over every parameter of net against central differences.
double network_fd_error(Network& net, const Tensor& x, const std::vector<int>& labels) {
  net.set_mode(Mode::train);
  const Tensor logits = net.forward(x);
  net.backward(softmax_cross_entropy(logits, labels).grad_logits);
  double worst = 0.0;
  for (auto* p : net.mutable_params()) {
    auto f = [&] { return network_loss(net, x, labels); };
    const Tensor numeric = oracle::central_difference(f, p->values);
    worst = std::max(worst, oracle::max_rel_error(p->grad, numeric));
  }
  return worst;
}

void randomize(Network& net, Rng& rng) {
  net.initialize(rng);
  for (auto* p : net.mutable_params())
    if (p->values.rank() == 1)
      for (auto& v : p->values.data()) v = 0.1 * rng.normal();
}

std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> l(n);
  for (auto& v : l) v = static_cast<int>(rng.index(k));
  return l;
}

}  // namespace

TEST_CASE("network forward") {
  SUBCASE("single zero-weight dense layer gives zero logits") {
    Network net;
    net.emplace<Dense>(4, 3);
    const Tensor y = net.forward(Tensor({2, 4}, 1.5));
    CHECK(y == Tensor({2, 3}));
  }
  SUBCASE("matches manual composition") {
    Rng rng(1);
    Network net = build_network("dense:3,4;relu;dense:4,2");
    net.initialize(rng);
    auto& d1 = dynamic_cast<Dense&>(net.layer(0));
    auto& d2 = dynamic_cast<Dense&>(net.layer(2));
    d1.bias().values = Tensor({4}, {0.1, -0.2, 0.3, 0.0});
    d2.bias().values = Tensor({2}, {0.5, -0.5});
    const Tensor x = oracle::random_tensor({5, 3}, rng);

    Tensor h = oracle::naive_matmul(x, transpose(d1.weight().values));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) h.at(i, j) = std::max(0.0, h.at(i, j) + d1.bias().values[j]);
    Tensor y = oracle::naive_matmul(h, transpose(d2.weight().values));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 2; ++j) y.at(i, j) += d2.bias().values[j];
    CHECK(max_abs_diff(net.forward(x), y) <= 1e-12);
  }
  SUBCASE("eval-mode output does not depend on dropout randomness") {
    Rng init(2);
    Network net = build_network("dense:4,8;relu;dropout:0.5;dense:8,3");
    net.initialize(init);
    net.set_mode(Mode::eval);
    const Tensor x = oracle::random_tensor({6, 4}, init);
    Rng a(100), b(200);
    CHECK(bit_equal(net.forward(x, &a), net.forward(x, &b)));
    CHECK(bit_equal(net.forward(x, &a), net.forward(x)));
  }
  SUBCASE("train mode without dropout equals eval mode bit for bit") {
    Rng rng(3);
    Network net = build_network("conv:2,3,3,1,1;relu;res:3,4,2;avgpool:2;flatten;dense:4,3");
    randomize(net, rng);
    const Tensor x = oracle::random_tensor({2, 2, 4, 4}, rng);
    net.set_mode(Mode::train);
    const Tensor train_out = net.forward(x);
    net.set_mode(Mode::eval);
    CHECK(bit_equal(train_out, net.forward(x)));
  }
  SUBCASE("shape mismatch names the layer index") {
    Network net = build_network("dense:3,4;relu;dense:5,2");
    try {
      net.forward(Tensor({1, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
    }
  }
  SUBCASE("eval mode caches nothing") {
    Network net = build_network("dense:2,2");
    net.set_mode(Mode::eval);
    net.forward(Tensor({1, 2}));
    CHECK_THROWS_AS(net.backward(Tensor({1, 2})), StateError);
  }
}

TEST_CASE("network backward") {
  SUBCASE("missing cache") {
    Network net = build_network("dense:2,2");
    CHECK_THROWS_AS(net.backward(Tensor({1, 2})), StateError);
  }
  SUBCASE("zero upstream gradient gives zero parameter gradients") {
    Rng rng(4);
    Network net = build_network("conv:1,2,3,1,1;relu;flatten;dense:32,3");
    randomize(net, rng);
    net.forward(oracle::random_tensor({2, 1, 4, 4}, rng));
    net.backward(Tensor({2, 3}));
    for (const auto* p : net.params()) CHECK(p->grad == Tensor(p->values.shape()));
  }
  SUBCASE("single dense layer under a square loss") {
    // L = 0.5 * sum(y^2) so dL/dy = y, dL/dW = y^T x, dL/db = column sums of y
    Rng rng(5);
    Network net = build_network("dense:3,2");
    randomize(net, rng);
    const Tensor x = oracle::random_tensor({4, 3}, rng);
    const Tensor y = net.forward(x);
    net.backward(y);
    auto& d = dynamic_cast<Dense&>(net.layer(0));
    CHECK(max_abs_diff(d.weight().grad, oracle::naive_matmul(transpose(y), x)) <= 1e-12);
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) s += y.at(i, j);
      CHECK(d.bias().grad[j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
  SUBCASE("2-conv residual net on 4x4 inputs matches finite differences") {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      Network net = build_network("conv:1,3,3,1,1;relu;res:3,3,1;flatten;dense:48,3");
      randomize(net, rng);
      const Tensor x = oracle::random_tensor({2, 1, 4, 4}, rng);
      CHECK(network_fd_error(net, x, random_labels(2, 3, rng)) <= 1e-5);
    }
  }
  SUBCASE("every layer kind matches finite differences") {
    Rng rng(7);
    const char* specs[] = {
        "dense:4,5;relu;dense:5,3",
        "conv:2,3,3,2,1;relu;flatten;dense:27,2",
        "conv:2,2,2,1,0;avgpool:2;flatten;dense:8,3",
        "res:2,3,2;flatten;dense:27,2",
        "res:2,2,1;relu;flatten;dense:50,2",
    };
    for (const char* spec : specs) {
      CAPTURE(spec);
      for (int trial = 0; trial < 10; ++trial) {
        Network net = build_network(spec);
        randomize(net, rng);
        const Shape in = std::string(spec).starts_with("dense") ? Shape{3, 4} : Shape{3, 2, 5, 5};
        const std::size_t k = net.forward(Tensor(in)).dim(1);
        CHECK(network_fd_error(net, oracle::random_tensor(in, rng), random_labels(3, k, rng)) <= 1e-5);
      }
    }
  }
  SUBCASE("dropout gradient follows the cached mask") {
    Rng rng(8);
    Network net = build_network("dense:3,6;dropout:0.6;dense:6,2");
    randomize(net, rng);
    const Tensor x = oracle::random_tensor({4, 3}, rng);
    const std::vector<int> labels{0, 1, 1, 0};
    Rng drop(42);
    net.forward(x, &drop);
    const Tensor logits = net.forward(x, &(drop = Rng(42)));
    net.backward(softmax_cross_entropy(logits, labels).grad_logits);
    // reproduce the same mask for every perturbed evaluation
    auto f = [&] {
      Rng r(42);
      Network copy = net;
      copy.set_mode(Mode::train);
      return softmax_cross_entropy(copy.forward(x, &r), labels).loss;
    };
    for (auto* p : net.mutable_params())
      CHECK(oracle::max_rel_error(p->grad, oracle::central_difference(f, p->values)) <= 1e-5);
  }
}

TEST_CASE("residual block") {
  SUBCASE("zero convolutions with identity skip give relu(x)") {
    ResidualBlock block(2, 2, 1);
    CHECK(block.projection() == nullptr);
    Rng rng(9);
    const Tensor x = oracle::random_tensor({1, 2, 3, 3}, rng);
    CHECK(bit_equal(block.forward(x, Mode::eval, nullptr), relu(x)));
  }
  SUBCASE("zeroed main path passes only relu_grad through the skip") {
    ResidualBlock block(2, 2, 1);
    Rng rng(10);
    const Tensor x = oracle::random_tensor({1, 2, 3, 3}, rng);
    const Tensor go = oracle::random_tensor({1, 2, 3, 3}, rng);
    block.forward(x, Mode::train, nullptr);
    CHECK(bit_equal(block.backward(go), relu_grad(x, go)));
  }
  SUBCASE("projection when shape changes") {
    ResidualBlock block(2, 4, 2);
    REQUIRE(block.projection() != nullptr);
    CHECK(block.forward(Tensor({1, 2, 6, 6}), Mode::eval, nullptr).shape() == Shape{1, 4, 3, 3});
    CHECK(block.mutable_params().size() == 6);
    for (const auto* p : block.params()) CHECK(p->channel_count() == 4);
  }
  SUBCASE("random blocks match finite differences") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3), stride = 1 + rng.index(2);
      ResidualBlock block(cin, cout, stride);
      block.initialize(rng);
      Tensor x = oracle::random_tensor({2, cin, 4, 4}, rng);
      const Tensor y = block.forward(x, Mode::train, nullptr);
      const Tensor go = oracle::random_tensor(y.shape(), rng);
      const Tensor gx = block.backward(go);
      auto f = [&] { return oracle::sum_product(block.forward(x, Mode::eval, nullptr), go); };
      CHECK(oracle::max_rel_error(gx, oracle::central_difference(f, x)) <= 1e-5);
      for (auto* p : block.mutable_params())
        CHECK(oracle::max_rel_error(p->grad, oracle::central_difference(f, p->values)) <= 1e-5);
    }
  }
}

TEST_CASE("dropout layer") {
  SUBCASE("keep_prob 1 is the identity") {
    Dropout d(1.0);
    Rng rng(12);
    const Tensor x = oracle::random_tensor({4, 4}, rng);
    CHECK(bit_equal(d.forward(x, Mode::train, &rng), x));
  }
  SUBCASE("eval mode is a bit-identical passthrough") {
    Dropout d(0.3);
    Rng rng(13);
    const Tensor x = oracle::random_tensor({4, 4}, rng);
    CHECK(bit_equal(d.forward(x, Mode::eval, nullptr), x));
  }
  SUBCASE("output is unbiased within 3 sigma over 10k draws") {
    const double keep = 0.7, value = 2.0;
    Dropout d(keep);
    Rng rng(14);
    const std::size_t trials = 10000;
    const Tensor y = d.forward(Tensor({trials}, value), Mode::train, &rng);
    double mean = 0.0;
    for (double v : y.data()) mean += v;
    mean /= static_cast<double>(trials);
    // each output is value/keep with prob keep, else 0
    const double sigma = value * std::sqrt((1.0 - keep) / keep) / std::sqrt(static_cast<double>(trials));
    CHECK(std::abs(mean - value) <= 3.0 * sigma);
  }
  SUBCASE("invalid keep probability") {
    CHECK_THROWS_AS(Dropout(0.0), ConfigError);
    CHECK_THROWS_AS(Dropout(1.5), ConfigError);
  }
  SUBCASE("train mode needs a random stream") {
    Dropout d(0.5);
    CHECK_THROWS_AS(d.forward(Tensor({2}), Mode::train, nullptr), StateError);
  }
}

TEST_CASE("droppable layer indices") {
  CHECK(droppable_layer_indices(build_network("conv:1,2,3;relu;flatten;dense:2,2")) ==
        std::vector<std::size_t>{0, 3});
  CHECK(droppable_layer_indices(build_network("conv:1,2,3;relu;dense:2,2")) == std::vector<std::size_t>{0, 2});
  CHECK(droppable_layer_indices(build_network("relu;flatten;dropout:0.5;avgpool:2")).empty());
  Network net = build_network("conv:1,4,3,1,1;res:4,4,1;res:4,8,2;flatten;dense:8,2");
  CHECK(droppable_layer_indices(net) == std::vector<std::size_t>{0, 1, 2, 4});
  CHECK(net.layer(1).params().size() == 4);
  CHECK(net.layer(2).params().size() == 6);
}

TEST_CASE("network spec round trip and builders") {
  const std::string spec = "conv:1,8,3,1,1;relu;res:8,16,2;avgpool:2;flatten;dropout:0.69999999999999996;dense:64,10";
  CHECK(build_network(spec).describe() == spec);
  CHECK_THROWS_AS(build_network("dense:3"), ConfigError);
  CHECK_THROWS_AS(build_network("lstm:3,3"), ConfigError);
  CHECK_THROWS_AS(build_network(""), ConfigError);

  Network mlp = build_architecture("mlp", {8}, 3);
  CHECK(droppable_layer_indices(mlp).size() == 6);
  CHECK(mlp.forward(Tensor({2, 8})).shape() == Shape{2, 3});
  Network cnn = build_architecture("cnn", {1, 8, 8}, 3);
  CHECK(droppable_layer_indices(cnn).size() == 7);
  CHECK(cnn.forward(Tensor({2, 1, 8, 8})).shape() == Shape{2, 3});
  Network res = build_architecture("resnet", {1, 8, 8}, 4);
  CHECK(res.forward(Tensor({2, 1, 8, 8})).shape() == Shape{2, 4});
  CHECK_THROWS_AS(build_architecture("cnn", {8}, 3), ConfigError);
}

TEST_CASE("with_dropout leaves parameters untouched") {
  Rng rng(15);
  Network net = build_architecture("mlp", {4}, 2);
  net.initialize(rng);
  Network dn = with_dropout(net, 0.7);
  CHECK(dn.size() == net.size() + 5);
  const auto a = net.params(), b = dn.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i]->values, b[i]->values));
}

TEST_CASE("network copies are deep") {
  Rng rng(16);
  Network net = build_network("dense:2,2");
  net.initialize(rng);
  Network copy = net;
  copy.mutable_params()[0]->values[0] += 1.0;
  CHECK(copy.params()[0]->values[0] != net.params()[0]->values[0]);
}
