// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "cdb/checkpoint.hpp"
#include "cdb/errors.hpp"
#include "cdb/train.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace cdb;

namespace {

Network random_net(const std::string& spec, std::uint64_t seed) {
  Rng rng(seed);
  Network net = build_network(spec);
  for (auto* p : net.mutable_params()) {
    p->values = oracle::random_tensor(p->values.shape(), rng);
    p->momentum = oracle::random_tensor(p->values.shape(), rng);
  }
  return net;
}

void check_same_state(const Network& a, const Network& b) {
  REQUIRE(a.describe() == b.describe());
  const auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(bit_equal(pa[i]->values, pb[i]->values));
    CHECK(bit_equal(pa[i]->momentum, pb[i]->momentum));
  }
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const std::string spec = "conv:1,4,3,1,1;relu;res:4,8,2;avgpool:2;flatten;dropout:0.5;dense:8,3";
  const Network net = random_net(spec, 1);
  SUBCASE("in memory") { check_same_state(decode_checkpoint(encode_checkpoint(net)), net); }
  SUBCASE("through a file") {
    test::ScratchDir dir("ckpt");
    save_checkpoint(net, dir / "m.cdbk");
    check_same_state(load_checkpoint(dir / "m.cdbk"), net);
    Network target = build_network(spec);
    load_checkpoint_into(target, dir / "m.cdbk");
    check_same_state(target, net);
  }
  SUBCASE("encoding is deterministic") { CHECK(encode_checkpoint(net) == encode_checkpoint(Network(net))); }
}

TEST_CASE("checkpoint corruption") {
  const Network net = random_net("dense:3,4;relu;dense:4,2", 2);
  const std::string bytes = encode_checkpoint(net);
  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("unknown version") {
    std::string b = bytes;
    b[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("every truncation is rejected") {
    for (std::size_t n = 0; n < bytes.size(); ++n) CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, n)), FormatError);
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError); }
  SUBCASE("topology mismatch") {
    test::ScratchDir dir("ckpt");
    save_checkpoint(net, dir / "m.cdbk");
    Network other = build_network("dense:3,5;relu;dense:5,2");
    const Network before = other;
    CHECK_THROWS_AS(load_checkpoint_into(other, dir / "m.cdbk"), FormatError);
    check_same_state(other, before);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint("/nonexistent/m.cdbk"), InputError); }
}

TEST_CASE("resuming from an epoch checkpoint matches an uninterrupted run") {
  const struct {
    Dataset train, test;
  } data{gen_blobs(30, 3, 8, 1.0, 5), gen_blobs(10, 3, 8, 1.0, 6)};
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.seed = 7;
  cfg.lr0 = 0.05;
  DropPolicy policy{.skip_first_n = 1};

  for (bool dropout : {false, true}) {
    CAPTURE(dropout);
    Network initial = build_architecture("mlp", {8}, 3);
    if (dropout) initial = with_dropout(initial, 0.7);
    initialize_network(initial, cfg.seed);

    Network full = initial;
    RunOptions opts{.schedule = DropSchedule::fixed};
    const auto full_records = run_training(cfg, policy, full, data.train, data.test, opts);

    test::ScratchDir dir("resume");
    Network first = initial;
    RunOptions stop = opts;
    stop.on_epoch = [&](const MetricsRecord& r, const Network& n) {
      if (r.epoch == 2) save_checkpoint(n, dir / "e2.cdbk");
    };
    run_training(cfg, policy, first, data.train, data.test, stop);

    Network resumed = load_checkpoint(dir / "e2.cdbk");
    RunOptions cont = opts;
    cont.start_epoch = 3;
    const auto tail = run_training(cfg, policy, resumed, data.train, data.test, cont);

    REQUIRE(tail.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(metrics_csv_row(tail[i], false) == metrics_csv_row(full_records[3 + i], false));
    check_same_state(resumed, full);
  }
}
