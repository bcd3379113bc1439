// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "moevc/model.hpp"
#include "moevc/sparse_engine.hpp"
#include "network_oracle.hpp"

using namespace moevc;

namespace {

using D = double;

struct Setup {
  RunConfig config;
  Model<D> model;
  Tensor<D> x;
};

Setup random_setup(Rng& rng, std::size_t frames) {
  RunConfig c;
  c.arch = oracle::random_arch(rng);
  c.train.seed = rng.next_u64() % 1000;
  Setup s{c, create_model<D>(c), {}};
  s.x = oracle::random_tensor<D>({1, c.arch.feature_dim, frames}, rng, 2.0);
  return s;
}

Tensor<D> dense_gated(const Setup& s, const SpeakerCode& src, const SpeakerCode& tgt, const GateSet<D>& gates) {
  Tape<D> tape;
  Net<D> net(tape, s.model.params);
  return moe_forward(net, s.model.arch(), tape.constant(s.x), src, tgt, ForwardMode::kConvert, &gates).output.value();
}

}  // namespace

TEST_CASE("plan_gates") {
  RunConfig c;
  c.arch.feature_dim = 4;
  c.arch.speakers = 2;
  c.arch.enc_channels = {3, 4};
  const ArchConfig& arch = c.arch;
  GateSet<D> g;
  g.enc = {Tensor<D>(Shape{3}, {0.5, 0.0, 1e-30}), Tensor<D>(Shape{4}, {1, 0, 1, 0})};
  g.dec = {Tensor<D>(Shape{3}, 1.0)};
  const auto plan = plan_gates(arch, g);
  // enc.0, enc.1, enc.mu, dec.0, dec.out
  REQUIRE(plan.layers.size() == 5);
  CHECK(plan.layers[0].active_out == std::vector<std::size_t>{0, 2});
  CHECK(plan.layers[1].active_in == std::vector<std::size_t>{0, 2});
  CHECK(plan.layers[1].active_out == std::vector<std::size_t>{0, 2});
  CHECK(plan.layers[2].active_in == std::vector<std::size_t>{0, 2});
  CHECK(plan.layers[2].active_out.size() == 8);
  // Decoder inputs: every latent channel plus the two code channels.
  CHECK(plan.layers[3].active_in == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(plan.layers[4].active_in == std::vector<std::size_t>{0, 1, 2, 3, 4});

  GateSet<D> dense;
  dense.enc = {Tensor<D>(Shape{3}, 1.0), Tensor<D>(Shape{4}, 1.0)};
  dense.dec = {Tensor<D>(Shape{3}, 1.0)};
  for (const auto& l : plan_gates(arch, dense).layers) CHECK(!l.active_out.empty());
  CHECK(plan_gates(arch, dense).layers[1].active_out.size() == 4);
  GateSet<D> wrong = dense;
  wrong.enc.pop_back();
  CHECK_THROWS_AS(plan_gates(arch, wrong), Error);
}

TEST_CASE("layer MAC arithmetic") {
  BaseLayer l;
  l.geom.kh = l.geom.kw = 3;
  l.glu = true;
  l.out = {10, 10};
  CHECK(layer_macs(l, 4, 8) == 57600);
  CHECK(flops(layer_macs(l, 4, 8)) == 115200);
  CHECK(flops(layer_macs(l, 4, 4)) == 57600);
  BaseLayer one;
  one.out = {1, 1};
  CHECK(layer_macs(one, 1, 1) == 1);
  BaseLayer t = l;
  t.transpose = true;
  t.in = {5, 5};
  CHECK(layer_macs(t, 4, 8) == 2 * 4 * 8 * 9 * 25);
}

TEST_CASE("analytic FLOP counts equal naive-loop multiply counts") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const Setup s = random_setup(rng, 4 + rng.index(12));
    const ArchConfig& arch = s.model.arch();
    const std::size_t frames = s.x.dim(2);
    const auto gates = oracle::random_gates<D>(arch, rng, 0.4, trial % 3 == 0);
    const auto src = one_hot(0, arch.speakers), tgt = one_hot(1, arch.speakers);
    const auto naive = oracle::naive_gated_base(s.model.params, arch, s.x, tgt, gates);
    const auto sparse = count_flops_sparse(plan_gates(arch, gates), arch, frames);
    const auto engine = sparse_forward(s.model.params, arch, s.x, src, tgt, &gates);
    REQUIRE(sparse.layers.size() == naive.layer_macs.size());
    for (std::size_t i = 0; i < naive.layer_macs.size(); ++i) {
      CAPTURE(sparse.layers[i].name);
      CHECK(sparse.layers[i].actual_macs == naive.layer_macs[i]);
      CHECK(engine.ledger.layers[i].actual_macs == naive.layer_macs[i]);
    }
    CHECK(max_abs_diff(engine.output, naive.output) <= 1e-10);

    GateSet<D> all = gates;
    for (auto& t : all.enc) t.fill(1);
    for (auto& t : all.dec) t.fill(1);
    const auto dense_naive = oracle::naive_gated_base(s.model.params, arch, s.x, tgt, all);
    const auto dense = count_flops_dense(arch, frames);
    for (std::size_t i = 0; i < dense.layers.size(); ++i) {
      CHECK(dense.layers[i].dense_macs == dense_naive.layer_macs[i]);
      CHECK(dense.layers[i].actual_macs == dense.layers[i].dense_macs);
      CHECK(sparse.layers[i].dense_macs == dense.layers[i].dense_macs);
    }
    REQUIRE(dense.overhead.size() == engine.ledger.overhead.size());
    for (std::size_t i = 0; i < dense.overhead.size(); ++i) {
      CAPTURE(dense.overhead[i].name);
      CHECK(dense.overhead[i].macs == engine.ledger.overhead[i].macs);
    }
  }
}

TEST_CASE("sparse forward equals the dense gated path") {
  Rng rng(42);
  for (int trial = 0; trial < 15; ++trial) {
    const Setup s = random_setup(rng, 6 + rng.index(10));
    const ArchConfig& arch = s.model.arch();
    const auto src = one_hot(rng.index(arch.speakers), arch.speakers);
    const auto tgt = one_hot(rng.index(arch.speakers), arch.speakers);
    const auto gates = oracle::random_gates<D>(arch, rng, 0.5, trial % 4 == 0);
    const auto sparse = sparse_forward(s.model.params, arch, s.x, src, tgt, &gates);
    CHECK(max_abs_diff(sparse.output, dense_gated(s, src, tgt, gates)) <= 1e-10);
  }
  // Computed gates, all active: identical bits and dense work.
  const Setup s = random_setup(rng, 12);
  const ArchConfig& arch = s.model.arch();
  const auto r = sparse_forward(s.model.params, arch, s.x, one_hot(0, arch.speakers), one_hot(1, arch.speakers));
  CHECK(zero_gate_fraction(r.gates) == 0.0);
  Tape<D> tape;
  Net<D> net(tape, s.model.params);
  const auto f = moe_forward(net, arch, tape.constant(s.x), one_hot(0, arch.speakers), one_hot(1, arch.speakers),
                             ForwardMode::kConvert);
  CHECK(bit_equal(r.output, f.output.value()));
  for (const auto& l : r.ledger.layers) CHECK(l.actual_macs == l.dense_macs);
}

TEST_CASE("an all-zero layer removes downstream feature work") {
  RunConfig c;
  c.arch.feature_dim = 6;
  c.arch.speakers = 3;
  c.arch.enc_channels = {3, 4, 4};
  const auto model = create_model<D>(c);
  const ArchConfig& arch = model.arch();
  Rng rng(43);
  const auto x = oracle::random_tensor<D>({1, 6, 16}, rng);
  GateSet<D> g;
  for (std::size_t n : encoder_gate_sizes(arch)) g.enc.emplace_back(Shape{n}, 1.0);
  for (std::size_t n : decoder_gate_sizes(arch)) g.dec.emplace_back(Shape{n}, 1.0);
  g.enc[1].fill(0);
  const auto r = sparse_forward(model.params, arch, x, one_hot(0, 3), one_hot(2, 3), &g);
  const auto layers = base_layers(arch, 16);
  // enc.1 computes nothing and enc.2 reads no channel. enc.2 still emits its
  // gated bias, so enc.mu runs dense.
  CHECK(r.ledger.layers[1].actual_macs == 0);
  CHECK(r.ledger.layers[2].actual_macs == 0);
  CHECK(r.ledger.layers[3].actual_macs == r.ledger.layers[3].dense_macs);
  // The decoder still convolves the code channels.
  CHECK(r.ledger.layers[4].actual_macs == layer_macs(layers[4], arch.latent_channels + 3, 4));
  CHECK(max_abs_diff(r.output, oracle::naive_gated_base(model.params, arch, x, one_hot(2, 3), g).output) <= 1e-10);
}

TEST_CASE("monotone work and FRR") {
  RunConfig c;
  c.arch.feature_dim = 5;
  c.arch.speakers = 2;
  const ArchConfig arch = c.arch;
  Rng rng(44);
  GateSet<D> g;
  for (std::size_t n : encoder_gate_sizes(arch)) g.enc.emplace_back(Shape{n}, 1.0);
  for (std::size_t n : decoder_gate_sizes(arch)) g.dec.emplace_back(Shape{n}, 1.0);
  auto actual = [&] { return count_flops_sparse(plan_gates(arch, g), arch, 32).actual_macs(); };
  const auto dense = count_flops_dense(arch, 32);
  const double r = static_cast<double>(dense.overhead_macs()) / static_cast<double>(dense.dense_macs());
  CHECK(frr(count_flops_sparse(plan_gates(arch, g), arch, 32), g).frr == doctest::Approx(-r).epsilon(1e-15));
  std::uint64_t prev = actual();
  double prev_frr = frr(count_flops_sparse(plan_gates(arch, g), arch, 32), g).frr;
  for (int i = 0; i < 30; ++i) {
    auto& layer = rng.uniform() < 0.6 ? g.enc[rng.index(g.enc.size())] : g.dec[rng.index(g.dec.size())];
    layer[rng.index(layer.size())] = 0;
    const std::uint64_t now = actual();
    const auto ledger = count_flops_sparse(plan_gates(arch, g), arch, 32);
    const double now_frr = frr(ledger, g).frr;
    CHECK(now <= prev);
    CHECK(now_frr >= prev_frr);
    std::uint64_t sum = 0;
    for (const auto& l : ledger.layers) sum += l.actual_macs;
    CHECK(sum == ledger.actual_macs());
    prev = now;
    prev_frr = now_frr;
  }
}

TEST_CASE("FRR definition and report consistency") {
  FlopLedger l;
  l.layers = {{"a", 600, 100}, {"b", 400, 180}};
  const GateSet<D> none;
  const auto report = frr(l, none, "u1");
  CHECK(report.frr == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(report.dense_flops == 2000);
  CHECK(report.actual_flops == 560);
  REQUIRE(report.layer_reduction.size() == 2);
  CHECK(report.layer_reduction[0] == 1.0 - 100.0 / 600.0);
  CHECK(report.layer_reduction[1] == 1.0 - 180.0 / 400.0);
}

TEST_CASE("FRR CSV rows round trip") {
  FrrReport r;
  r.utterance_id = "spk01/u003";
  r.frr = 0.123456789012345678;
  r.dense_flops = 134664192;
  r.actual_flops = 1000;
  r.overhead_flops = 77;
  r.gate_sparsity = {0.0, 0.5, 1.0 / 3.0};
  const auto row = frr_csv_row(r);
  const auto back = parse_frr_csv_row(row);
  CHECK(frr_csv_row(back) == row);
  CHECK(back.frr == r.frr);
  CHECK(back.gate_sparsity == r.gate_sparsity);
  CHECK(frr_csv_header() == "utterance_id,frr,dense_flops,actual_flops,overhead_flops,layer_sparsity");
  CHECK_THROWS_AS(parse_frr_csv_row("a,b"), Error);
}
