// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "moevc/acvae.hpp"
#include "moevc/adam.hpp"
#include "moevc/corpus.hpp"
#include "moevc/gated_vae.hpp"
#include "moevc/gradcheck.hpp"
#include "moevc/gradcheck_suite.hpp"
#include "moevc/model.hpp"
#include "moevc/moe_gating.hpp"
#include "moevc/objective.hpp"
#include "oracles.hpp"

using namespace moevc;

namespace {

using D = double;

RunConfig small_config() {
  RunConfig c = tiny_gradcheck_config();
  c.train.segment = 16;
  return c;
}

Tensor<D> random_input(const ArchConfig& arch, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor<D>({1, arch.feature_dim, frames}, rng, 1.5);
}

// Index of the named parameter within the set.
std::size_t index_of(const ParamSet<D>& params, const std::string& name) { return params.at(name).index; }

bool all_zero(const Tensor<D>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](D v) { return v == 0.0; });
}

// Sum of |gradient| over every parameter whose name starts with prefix.
double grad_mass(const ParamSet<D>& params, const GradientSet<D>& grads, const std::string& prefix) {
  double total = 0;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name.rfind(prefix, 0) == 0)
      for (D v : grads[i].values()) total += std::abs(v);
  return total;
}

}  // namespace

TEST_CASE("concat_code stacks features then tiled code") {
  Tape<D> tape;
  auto h = tape.input(Tensor<D>(Shape{2, 1, 1}, {3.0, 4.0}));
  const auto out = concat_code(h, one_hot(1, 2));
  CHECK(out.value() == Tensor<D>(Shape{4, 1, 1}, {3, 4, 0, 1}));
  const auto wide = concat_code(tape.input(Tensor<D>(Shape{1, 2, 3})), one_hot(0, 2)).value();
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(wide[6 + i] == 1.0);
    CHECK(wide[12 + i] == 0.0);
  }
  tape.backward(sum(mul(out, out)));
  CHECK(tape.grad(h) == Tensor<D>(Shape{2, 1, 1}, {6.0, 8.0}));

  ParamSet<D> params;
  Rng rng(1);
  params.add("h", oracle::random_tensor<D>({2, 3, 4}, rng));
  const auto weight = oracle::random_tensor<D>({5, 3, 4}, rng);
  LossBuilder<D> build = [&](Tape<D>& t, const ParamSet<D>& p) {
    return sum(mul(concat_code(t.param(p.at("h")), one_hot(2, 3)), t.constant(weight)));
  };
  CHECK(finite_diff_check(build, params).passed);
}

TEST_CASE("glu layer") {
  Rng rng(2);
  ParamSet<D> params;
  params.add("l.W", oracle::random_tensor<D>({3, 2, 3, 3}, rng));
  params.add("l.b", oracle::random_tensor<D>({3}, rng));
  params.add("l.V", oracle::random_tensor<D>({3, 2, 3, 3}, rng));
  params.add("l.d", oracle::random_tensor<D>({3}, rng));
  const auto x = oracle::random_tensor<D>({2, 4, 6}, rng);
  ConvGeometry g;
  g.kh = g.kw = 3;
  g.ph = g.pw = 1;
  g.sw = 2;

  Tape<D> tape;
  Net<D> net(tape, params);
  auto xv = tape.constant(x);
  const auto out = glu_forward(net, "l", xv, g, false).value();
  // Same arithmetic from the primitives.
  auto lin = add_channel_bias(conv2d(xv, tape.constant(params.at("l.W").value), g), tape.constant(params.at("l.b").value));
  auto gate = sigmoid(add_channel_bias(conv2d(xv, tape.constant(params.at("l.V").value), g), tape.constant(params.at("l.d").value)));
  CHECK(bit_equal(out, mul(lin, gate).value()));

  ParamSet<D> half = params;
  half.at("l.V").value.fill(0);
  half.at("l.d").value.fill(0);
  Tape<D> t2;
  Net<D> n2(t2, half);
  const auto halved = glu_forward(n2, "l", t2.constant(x), g, false).value();
  for (std::size_t i = 0; i < halved.size(); ++i) CHECK(halved[i] == lin.value()[i] * 0.5);

  ParamSet<D> dead = params;
  dead.at("l.W").value.fill(0);
  dead.at("l.b").value.fill(0);
  Tape<D> t3;
  Net<D> n3(t3, dead);
  CHECK(all_zero(glu_forward(n3, "l", t3.constant(x), g, false).value()));

  Tape<D> t4;
  Net<D> n4(t4, params);
  CHECK_THROWS_AS(glu_forward(n4, "l", t4.constant(Tensor<D>(Shape{3, 4, 6})), g, false), Error);
}

TEST_CASE("encoder and decoder shapes at the default architecture") {
  RunConfig cfg;
  cfg.arch.feature_dim = 36;
  cfg.arch.speakers = 4;
  const auto model = create_model<D>(cfg);
  const ArchConfig& arch = model.arch();
  for (std::size_t n : {64, 128, 40}) {
    Tape<D> tape;
    Net<D> net(tape, model.params);
    auto x = tape.constant(random_input(arch, n, 3));
    const auto latent = encode(net, arch, x, nullptr);
    CHECK(latent.mu.shape() == Shape{8, 36, latent_extent(arch, n).n});
    CHECK(latent.logvar.shape() == latent.mu.shape());
    if (n % 8 == 0) CHECK(latent.mu.shape()[2] == n / 8);
    CHECK(decode(net, arch, latent.z, one_hot(1, 4), n).shape() == Shape{1, 36, n});
  }
  // Deterministic mode and code sensitivity.
  Tape<D> tape;
  Net<D> net(tape, model.params);
  auto x = tape.constant(random_input(arch, 32, 4));
  const auto a = encode(net, arch, x, nullptr).z.value();
  const auto b = encode(net, arch, x, nullptr).z.value();
  CHECK(bit_equal(a, b));
  auto z = tape.constant(a);
  CHECK(max_abs_diff(decode(net, arch, z, one_hot(0, 4), 32).value(), decode(net, arch, z, one_hot(3, 4), 32).value()) > 0);
}

TEST_CASE("vae loss and conversion") {
  const RunConfig cfg = small_config();
  const ArchConfig& arch = cfg.arch;
  auto model = create_model<D>(cfg);
  const auto x = random_input(arch, 16, 5);

  Tape<D> tape;
  auto xv = tape.constant(x);
  LatentSeq<D> zero;
  zero.mu = tape.constant(Tensor<D>(Shape{2, 4, 4}));
  zero.logvar = zero.mu;
  CHECK(vae_terms(xv, xv, zero).total.value().item() == 0.0);

  Net<D> net(tape, model.params);
  const auto latent = encode(net, arch, xv, nullptr);
  const auto terms = vae_terms(xv, decode(net, arch, latent.z, one_hot(0, 2), 16), latent);
  CHECK(terms.lat.value().item() == kl_std_normal(latent.mu, latent.logvar).value().item());

  // Converting to the source code is the plain reconstruction.
  CHECK(bit_equal(convert(net, arch, xv, one_hot(0, 2)).value(), decode(net, arch, latent.mu, one_hot(0, 2), 16).value()));
  CHECK(convert(net, arch, xv, one_hot(1, 2)).shape() == x.shape());

  // Overfitting one utterance lowers the objective.
  auto adam = make_adam_state(model.params, AdamConfig{0.01});
  double first = 0, last = 0;
  for (int step = 0; step < 600; ++step) {
    Tape<D> t;
    Net<D> n(t, model.params);
    Rng rng(step);
    auto loss = vae_loss(n, arch, t.constant(x), one_hot(0, 2), rng).total;
    if (step == 0) first = loss.value().item();
    if (step >= 580) last += loss.value().item() / 20;
    t.backward(loss);
    GradientSet<D> grads(model.params);
    t.accumulate_param_grads(grads);
    adam_step(model.params, grads, adam);
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("classifier") {
  RunConfig cfg = small_config();
  cfg.arch.cls_kernel = {3, 1};
  cfg.arch.cls_stride = {1, 1};
  auto model = create_model<D>(cfg);
  const ArchConfig& arch = cfg.arch;
  const auto x = random_input(arch, 12, 6);
  Tensor<D> permuted(x.shape());
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t t = 0; t < 12; ++t) permuted.at(0, d, t) = x.at(0, d, (t * 5 + 3) % 12);
  Tape<D> tape;
  Net<D> net(tape, model.params);
  const auto a = classify(net, arch, tape.constant(x)).value();
  const auto b = classify(net, arch, tape.constant(permuted)).value();
  CHECK(a.shape() == Shape{2});
  CHECK(max_abs_diff(a, b) <= 1e-12);

  ParamSet<D> uniform = model.params;
  uniform.at("cls.fc.W").value.fill(0);
  uniform.at("cls.fc.b").value.fill(0);
  Tape<D> t2;
  Net<D> n2(t2, uniform);
  CHECK(mi_term(n2, arch, t2.constant(x), 1).value().item() == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(ce_term(n2, arch, t2.constant(x), 1).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  uniform.at("cls.fc.b").value[1] = 30;
  Tape<D> t3;
  Net<D> n3(t3, uniform);
  const double near_perfect = mi_term(n3, arch, t3.constant(x), 1).value().item();
  CHECK(near_perfect < 0);
  CHECK(near_perfect > -1e-12);
}

TEST_CASE("mi and ce gradients reach the intended parameters only") {
  const RunConfig cfg = small_config();
  const ArchConfig& arch = cfg.arch;
  const auto model = create_model<D>(cfg);
  const auto x = random_input(arch, 16, 7);

  Tape<D> tape;
  Net<D> net(tape, model.params);
  auto xv = tape.constant(x);
  const auto latent = encode(net, arch, xv, nullptr);
  auto xbar = decode(net, arch, latent.z, one_hot(1, 2), 16);
  tape.backward(mi_term(net, arch, xbar, 1));
  GradientSet<D> mi(model.params);
  tape.accumulate_param_grads(mi);
  CHECK(grad_mass(model.params, mi, "enc.") > 0);
  CHECK(grad_mass(model.params, mi, "dec.") > 0);
  CHECK(grad_mass(model.params, mi, "cls.") == 0);

  Tape<D> t2;
  Net<D> n2(t2, model.params);
  auto x2 = t2.constant(x);
  const auto l2 = encode(n2, arch, x2, nullptr);
  t2.backward(ce_term(n2, arch, decode(n2, arch, l2.z, one_hot(0, 2), 16), 0));
  GradientSet<D> ce(model.params);
  t2.accumulate_param_grads(ce);
  CHECK(grad_mass(model.params, ce, "enc.") == 0);
  CHECK(grad_mass(model.params, ce, "dec.") == 0);
  CHECK(grad_mass(model.params, ce, "cls.") > 0);
}

TEST_CASE("classifier learns speakers from real features") {
  SyntheticCorpusSpec spec;
  spec.utterances = 10;
  spec.frames = 64;
  spec.dim = 12;
  RunConfig cfg;
  cfg.arch.feature_dim = spec.dim;
  cfg.arch.speakers = spec.speakers;
  cfg.arch.cls_channels = {4};
  cfg.arch.moe = false;
  auto model = create_model<float>(cfg);
  std::vector<FeatureSeq> train, held;
  for (std::size_t s = 0; s < spec.speakers; ++s) {
    auto utts = synthesize_speaker(spec, s);
    for (std::size_t i = 0; i < utts.size(); ++i) (i < 8 ? train : held).push_back(utts[i]);
  }
  const auto stats = compute_stats(train);
  auto adam = make_adam_state(model.params, AdamConfig{});
  Rng rng(3);
  for (int step = 0; step < 300; ++step) {
    const auto& u = train[rng.index(train.size())];
    Tape<float> t;
    Net<float> n(t, model.params);
    auto seg = sample_training_segment(standardize(u, stats), 32, rng);
    auto loss = ce_term(n, model.arch(), t.constant(to_network_input<float>(seg)), u.speaker);
    t.backward(loss);
    GradientSet<float> grads(model.params);
    t.accumulate_param_grads(grads);
    adam_step(model.params, grads, adam);
  }
  int correct = 0;
  for (const auto& u : held) {
    Tape<float> t;
    Net<float> n(t, model.params);
    const auto logits = classify(n, model.arch(), t.constant(to_network_input<float>(standardize(u, stats)))).value();
    correct += static_cast<std::size_t>(std::max_element(logits.values().begin(), logits.values().end()) -
                                        logits.values().begin()) == u.speaker;
  }
  CHECK(double(correct) / held.size() > 1.0 / spec.speakers + 0.3);
}

TEST_CASE("embedding networks") {
  RunConfig cfg = small_config();
  cfg.arch.een_kernel = {1, 1};
  cfg.arch.een_stride = {1, 1};
  const auto model = create_model<D>(cfg);
  const ArchConfig& arch = cfg.arch;
  const auto x = random_input(arch, 12, 8);
  Tensor<D> permuted(x.shape());
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t t = 0; t < 12; ++t) permuted.at(0, d, t) = x.at(0, d, (t * 7 + 1) % 12);
  Tape<D> tape;
  Net<D> net(tape, model.params);
  const auto e1 = een_embed(net, arch, tape.constant(x), one_hot(0, 2)).value();
  const auto e2 = een_embed(net, arch, tape.constant(permuted), one_hot(0, 2)).value();
  CHECK(e1.size() == arch.embed_dim);
  CHECK(max_abs_diff(e1, e2) <= 1e-12);
  CHECK(een_embed(net, arch, tape.constant(random_input(arch, 20, 1)), one_hot(1, 2)).value().size() == arch.embed_dim);

  Rng zr(4);
  auto z = tape.constant(oracle::random_tensor<D>({2, 4, 5}, zr));
  const auto d0 = den_embed(net, arch, z, one_hot(0, 2));
  const auto d1 = den_embed(net, arch, z, one_hot(1, 2));
  CHECK(d0.embed.value().size() == arch.embed_dim);
  CHECK(max_abs_diff(d0.embed.value(), d1.embed.value()) > 0);
  CHECK(d0.l_ae.value().item() >= 0);
  CHECK(bit_equal(d0.l_ae.value(), d1.l_ae.value()));
}

TEST_CASE("sparse gating network and gate application") {
  const RunConfig cfg = small_config();
  const auto model = create_model<D>(cfg);
  Tape<D> tape;
  Net<D> net(tape, model.params);
  const auto ones = sgn_gates(net, "sgn.enc.0", tape.constant(Tensor<D>(Shape{cfg.arch.embed_dim}))).value();
  CHECK(ones == Tensor<D>(Shape{2}, 1.0));

  ParamSet<D> neg = model.params;
  neg.at("sgn.enc.1.b").value = Tensor<D>(Shape{3}, {-1.0, 0.5, -2.0});
  Tape<D> t2;
  Net<D> n2(t2, neg);
  const auto g = sgn_gates(n2, "sgn.enc.1", t2.constant(Tensor<D>(Shape{cfg.arch.embed_dim}, 0.1))).value();
  CHECK(g[0] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[1] > 0.0);

  Rng rng(9);
  const auto h = oracle::random_tensor<D>({2, 2, 3}, rng);
  auto hv = tape.constant(h);
  CHECK(bit_equal(apply_gates(hv, tape.constant(Tensor<D>(Shape{2}, 1.0))).value(), h));
  CHECK(all_zero(apply_gates(hv, tape.constant(Tensor<D>(Shape{2}, 0.0))).value()));
  const auto scaled = apply_gates(hv, tape.constant(Tensor<D>(Shape{2}, {2.0, 0.0}))).value();
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(scaled[i] == 2 * h[i]);
    CHECK(scaled[6 + i] == 0.0);
  }
}

TEST_CASE("l_spc") {
  Tape<D> tape;
  std::vector<Var<D>> gates{tape.constant(Tensor<D>(Shape{2}, {1, 0})), tape.constant(Tensor<D>(Shape{2}, {2, 1}))};
  CHECK(l_spc(std::span<const Var<D>>(gates)).value().item() == 1.0);
  std::vector<Var<D>> zeros{tape.constant(Tensor<D>(Shape{3}))};
  CHECK(l_spc(std::span<const Var<D>>(zeros)).value().item() == 0.0);
  std::vector<Var<D>> tripled{scale(gates[0], 3.0), scale(gates[1], 3.0)};
  CHECK(l_spc(std::span<const Var<D>>(tripled)).value().item() == 3.0);
}

TEST_CASE("gated forward structural properties") {
  RunConfig cfg = small_config();
  const auto learned = create_model<D>(cfg);
  cfg.arch.gating = GatingMode::kIdentity;
  const ArchConfig& arch = cfg.arch;
  const auto x = random_input(arch, 16, 10);

  SUBCASE("identity gates reproduce the base network bit for bit") {
    Tape<D> tape;
    Net<D> net(tape, learned.params);
    auto xv = tape.constant(x);
    const auto f = moe_forward(net, arch, xv, one_hot(0, 2), one_hot(1, 2), ForwardMode::kConvert);
    CHECK(bit_equal(f.output.value(), convert(net, arch, xv, one_hot(1, 2)).value()));
    const auto gates = gate_values(f);
    CHECK(zero_gate_fraction(gates) == 0.0);
  }
  SUBCASE("reconstruct equals convert to the source") {
    Tape<D> tape;
    Net<D> net(tape, learned.params);
    auto xv = tape.constant(x);
    const auto a = moe_forward(net, learned.arch(), xv, one_hot(1, 2), one_hot(0, 2), ForwardMode::kReconstruct);
    const auto b = moe_forward(net, learned.arch(), xv, one_hot(1, 2), one_hot(1, 2), ForwardMode::kConvert);
    CHECK(bit_equal(a.output.value(), b.output.value()));
  }
  SUBCASE("decoder gates ignore the source code") {
    Tape<D> tape;
    Net<D> net(tape, learned.params);
    auto xv = tape.constant(x);
    const auto f = moe_forward(net, learned.arch(), xv, one_hot(0, 2), one_hot(1, 2), ForwardMode::kConvert);
    const auto other = moe_forward(net, learned.arch(), xv, one_hot(1, 2), one_hot(1, 2), ForwardMode::kConvert);
    // Same z, different source: decoder gates depend on (z, target) only.
    auto z = tape.constant(f.latent.z.value());
    const auto g1 = decoder_gates(net, learned.arch(), z, one_hot(1, 2), false).gates;
    const auto g2 = decoder_gates(net, learned.arch(), z, one_hot(1, 2), false).gates;
    for (std::size_t l = 0; l < g1.size(); ++l) {
      CHECK(bit_equal(g1[l].value(), f.dec_gates[l].value()));
      CHECK(bit_equal(g2[l].value(), g1[l].value()));
    }
    CHECK(other.enc_gates.size() == f.enc_gates.size());
  }
  SUBCASE("zero weights reduce the objectives") {
    LossWeights w{0.0, 0.0, 0.0, 0.0};
    auto total = [&](const ArchConfig& a, Objective o, const LossWeights& lw) {
      Tape<D> tape;
      Net<D> net(tape, learned.params);
      Rng reparam(1), target(2);
      return training_loss(net, a, tape.constant(x), one_hot(0, 2), lw, o, LossRngs{reparam, target}).total.value();
    };
    CHECK(bit_equal(total(learned.arch(), Objective::kAcvae, w), total(learned.arch(), Objective::kVae, w)));
    LossWeights acvae{1.0, 1.0, 0.0, 0.0};
    CHECK(bit_equal(total(arch, Objective::kMoe, acvae), total(arch, Objective::kAcvae, acvae)));
  }
}

TEST_CASE("gradient-check suite on the tiny model") {
  const auto suite = run_gradcheck_suite(tiny_gradcheck_config());
  CHECK(suite.passed());
  CHECK(suite.cases.size() == 9);
  CHECK(suite.worst().report.max_rel_error <= 1e-4);
  GradCheckOptions broken;
  broken.corrupt_analytic = true;
  const auto bad = run_gradcheck_suite(tiny_gradcheck_config(), broken);
  CHECK_FALSE(bad.passed());
  CHECK(!bad.worst().report.worst_path.empty());
}
