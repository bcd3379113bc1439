// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "moevc/adam.hpp"
#include "moevc/autodiff.hpp"
#include "moevc/gradcheck.hpp"
#include "moevc/kernels.hpp"
#include "oracles.hpp"

using namespace moevc;

namespace {

using D = double;

Tensor<D> vec(std::initializer_list<D> v) { return Tensor<D>(Shape{v.size()}, std::vector<D>(v)); }

ConvGeometry random_geometry(Rng& rng, std::size_t h, std::size_t w) {
  ConvGeometry g;
  g.kh = 1 + rng.index(std::min<std::size_t>(h, 4));
  g.kw = 1 + rng.index(std::min<std::size_t>(w, 4));
  g.sh = 1 + rng.index(3);
  g.sw = 1 + rng.index(3);
  g.ph = rng.index(g.kh);
  g.pw = rng.index(g.kw);
  return g;
}

// Scalar loss sum(f(x) * r) for a fixed random r, so every output element
// carries a distinct weight into the gradient.
GradCheckReport check_unary(const std::function<Var<D>(Var<D>)>& f, Tensor<D> x, std::uint64_t seed = 3) {
  ParamSet<D> params;
  params.add("x", std::move(x));
  Tape<D> probe;
  const Shape out_shape = f(probe.param(params.at("x"))).shape();
  Rng rng(seed);
  const Tensor<D> r = oracle::random_tensor<D>(out_shape, rng);
  LossBuilder<D> build = [&](Tape<D>& tape, const ParamSet<D>& p) {
    return sum(mul(f(tape.param(p.at("x"))), tape.constant(r)));
  };
  return finite_diff_check(build, params);
}

}  // namespace

TEST_CASE("conv2d hand example and identity kernel") {
  Tape<D> tape;
  auto x = tape.constant(Tensor<D>(Shape{1, 1, 3}, {1, 2, 3}));
  auto k = tape.constant(Tensor<D>(Shape{1, 1, 1, 2}, {1, 1}));
  ConvGeometry g;
  g.kw = 2;
  const auto y = conv2d(x, k, g).value();
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y[0] == 5 - 2);
  CHECK(y[1] == 5);

  Rng rng(1);
  const auto xr = oracle::random_tensor<D>({1, 4, 5}, rng);
  auto id = tape.constant(Tensor<D>(Shape{1, 1, 1, 1}, {1.0}));
  CHECK(bit_equal(conv2d(tape.constant(xr), id, ConvGeometry{}).value(), xr));
  CHECK(bit_equal(conv2d_transpose(tape.constant(xr), id, ConvGeometry{}).value(), xr));
}

TEST_CASE("conv2d matches the nested-loop oracle on 200 random configurations") {
  Rng rng(11);
  {
    const auto x = oracle::random_tensor<D>({3, 5, 5}, rng);
    const auto k = oracle::random_tensor<D>({4, 3, 3, 3}, rng);
    ConvGeometry g;
    g.kh = g.kw = 3;
    CHECK(max_abs_diff(conv2d_forward(x, k, g), oracle::conv2d(x, k, g)) <= 1e-12);
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3);
    const std::size_t h = 1 + rng.index(7), w = 1 + rng.index(9);
    const ConvGeometry g = random_geometry(rng, h, w);
    const auto x = oracle::random_tensor<D>({cin, h, w}, rng);
    const auto k = oracle::random_tensor<D>({cout, cin, g.kh, g.kw}, rng);
    const auto got = conv2d_forward(x, k, g);
    const auto want = oracle::conv2d(x, k, g);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("conv transpose matches the full-scatter oracle and is the adjoint of conv2d") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cin = 1 + rng.index(3), cout = 1 + rng.index(3);
    const std::size_t h = 1 + rng.index(6), w = 1 + rng.index(8);
    ConvGeometry g = random_geometry(rng, 9, 9);
    g.oph = rng.index(g.sh);
    g.opw = rng.index(g.sw);
    if ((h - 1) * g.sh + g.kh + g.oph <= 2 * g.ph || (w - 1) * g.sw + g.kw + g.opw <= 2 * g.pw) continue;
    const auto x = oracle::random_tensor<D>({cin, h, w}, rng);
    const auto k = oracle::random_tensor<D>({cin, cout, g.kh, g.kw}, rng);
    const auto got = conv_transpose_forward(x, k, g);
    const auto want = oracle::conv_transpose(x, k, g);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) <= 1e-12);

    // <conv2d(y), x> == <y, conv_transpose(x)> with the same kernel.
    const auto y = oracle::random_tensor<D>(got.shape(), rng);
    const auto cy = conv2d_forward(y, k, g);
    REQUIRE(cy.shape() == x.shape());
    const D lhs = std::inner_product(cy.values().begin(), cy.values().end(), x.values().begin(), D{0});
    const D rhs = std::inner_product(y.values().begin(), y.values().end(), got.values().begin(), D{0});
    CHECK(std::abs(lhs - rhs) <= 1e-10 * (1 + std::abs(lhs)));
  }
}

TEST_CASE("conv2d then transpose with a scalar kernel scales by w squared") {
  Tape<D> tape;
  Rng rng(2);
  const auto x = oracle::random_tensor<D>({1, 3, 4}, rng);
  auto k = tape.constant(Tensor<D>(Shape{1, 1, 1, 1}, {0.75}));
  const auto y = conv2d_transpose(conv2d(tape.constant(x), k, ConvGeometry{}), k, ConvGeometry{}).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i] * 0.5625).epsilon(1e-15));
}

TEST_CASE("channel subsets reproduce the dense result bit for bit") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cin = 2 + rng.index(3), cout = 2 + rng.index(3);
    ConvGeometry g;
    g.kh = 3;
    g.kw = 1 + 2 * rng.index(3);
    g.sh = 1;
    g.sw = 1 + rng.index(2);
    g.ph = 1;
    g.pw = g.kw / 2;
    auto x = oracle::random_tensor<D>({cin, 4, 10}, rng);
    std::vector<std::size_t> in, out;
    for (std::size_t c = 0; c < cin; ++c) {
      if (rng.uniform() < 0.5) {
        in.push_back(c);
      } else {
        for (std::size_t i = 0; i < 40; ++i) x[c * 40 + i] = 0;
      }
    }
    for (std::size_t c = 0; c < cout; ++c)
      if (rng.uniform() < 0.5) out.push_back(c);
    const auto k = oracle::random_tensor<D>({cout, cin, g.kh, g.kw}, rng);
    MacCounter counter;
    const auto sub = conv2d_forward(x, k, g, std::span<const std::size_t>(in), std::span<const std::size_t>(out), &counter);
    const auto dense = conv2d_forward(x, k, g);
    CHECK(counter.macs == in.size() * out.size() * g.kh * g.kw * sub.dim(1) * sub.dim(2));
    for (std::size_t co : out)
      for (std::size_t i = 0; i < sub.dim(1) * sub.dim(2); ++i)
        CHECK(sub[co * sub.dim(1) * sub.dim(2) + i] == dense[co * sub.dim(1) * sub.dim(2) + i]);

    const auto kt = oracle::random_tensor<D>({cin, cout, g.kh, g.kw}, rng);
    const auto tsub = conv_transpose_forward(x, kt, g, std::span<const std::size_t>(in), std::span<const std::size_t>(out));
    const auto tdense = conv_transpose_forward(x, kt, g);
    const std::size_t plane = tsub.dim(1) * tsub.dim(2);
    for (std::size_t co : out)
      for (std::size_t i = 0; i < plane; ++i) CHECK(tsub[co * plane + i] == tdense[co * plane + i]);
  }
}

TEST_CASE("conv2d rejects mismatched channels") {
  Tape<D> tape;
  auto x = tape.constant(Tensor<D>(Shape{2, 3, 3}));
  auto k = tape.constant(Tensor<D>(Shape{1, 3, 1, 1}));
  CHECK_THROWS_AS(conv2d(x, k, ConvGeometry{}), Error);
}

TEST_CASE("elementwise examples") {
  Tape<D> tape;
  CHECK(sigmoid(tape.constant(Tensor<D>::scalar(0))).value().item() == 0.5);
  const auto r = relu(tape.constant(vec({-1, 0, 2}))).value();
  CHECK(r[0] == 0.0);
  CHECK(!std::signbit(r[0]));
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
  CHECK(l1_norm(tape.constant(vec({1, -2, 0, 1}))).value().item() == 1.0);
  CHECK(mse(tape.constant(vec({1, 2})), tape.constant(vec({0, 0}))).value().item() == 2.5);
  CHECK(mean(tape.constant(vec({1, 2, 3, 6}))).value().item() == 3.0);
  CHECK_THROWS_AS(add(tape.constant(vec({1, 2})), tape.constant(vec({1, 2, 3}))), Error);
  CHECK(add(tape.constant(vec({1, 2})), tape.constant(Tensor<D>::scalar(1))).value() == vec({2, 3}));
}

TEST_CASE("softmax cross-entropy") {
  Tape<D> tape;
  auto uniform = tape.input(vec({0.3, 0.3, 0.3, 0.3}));
  auto ce = softmax_cross_entropy(uniform, 0);
  CHECK(ce.value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  tape.backward(ce);
  const auto g = tape.grad(uniform);
  CHECK(g[0] == doctest::Approx(-0.75).epsilon(1e-14));
  for (int i = 1; i < 4; ++i) CHECK(g[i] == doctest::Approx(0.25).epsilon(1e-14));
  // -log(e^10 / (e^10 + 2)) = log(1 + 2 e^-10)
  CHECK(softmax_cross_entropy(tape.constant(vec({10, 0, 0})), 0).value().item() ==
        doctest::Approx(std::log1p(2 * std::exp(-10.0))).epsilon(1e-12));
  CHECK(std::abs(softmax_cross_entropy(tape.constant(vec({10, 0, 0})), 0).value().item() - 9.08e-5) < 1e-7);
  CHECK_THROWS_AS(softmax_cross_entropy(tape.constant(vec({1, 2})), 2), Error);
}

TEST_CASE("kl against a standard normal") {
  Tape<D> tape;
  CHECK(kl_std_normal(tape.constant(vec({0, 0})), tape.constant(vec({0, 0}))).value().item() == 0.0);
  CHECK(kl_std_normal(tape.constant(vec({1})), tape.constant(vec({0}))).value().item() == 0.5);
  CHECK(kl_std_normal(tape.constant(vec({0})), tape.constant(vec({std::log(4.0)}))).value().item() ==
        doctest::Approx(0.5 * (3 - std::log(4.0))).epsilon(1e-14));
}

TEST_CASE("reparameterised sampling") {
  Tape<D> tape;
  auto mu = tape.constant(vec({0.5, -1.0}));
  Rng a(5), b(5);
  CHECK(bit_equal(sample_reparam(mu, tape.constant(vec({0.1, 0.2})), a).value(),
                  sample_reparam(mu, tape.constant(vec({0.1, 0.2})), b).value()));
  Rng c(6);
  CHECK(sample_reparam(mu, tape.constant(vec({-80, -80})), c).value() == vec({0.5, -1.0}));

  // Sample mean of N(mu, e^logvar) over 1e5 draws lies within 3 sigma / sqrt(n).
  const std::size_t n = 100000;
  const double m = 0.7, logvar = std::log(2.25);
  Tensor<D> mus(Shape{n}, m), lvs(Shape{n}, logvar);
  Rng r(7);
  const auto z = sample_reparam(tape.constant(mus), tape.constant(lvs), r).value();
  const double mean_z = std::accumulate(z.values().begin(), z.values().end(), 0.0) / n;
  CHECK(std::abs(mean_z - m) <= 3 * 1.5 / std::sqrt(double(n)));
}

TEST_CASE("backward basics") {
  Tape<D> tape;
  auto x = tape.input(Tensor<D>(Shape{2, 3}, 1.5));
  auto unused = tape.input(Tensor<D>(Shape{2}, 1.0));
  auto loss = sum(x);
  tape.backward(loss);
  CHECK(tape.grad(x) == Tensor<D>(Shape{2, 3}, 1.0));
  CHECK(tape.grad(unused) == Tensor<D>(Shape{2}, 0.0));
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(21);
  auto away_from_zero = [&](Shape s) {
    auto t = oracle::random_tensor<D>(std::move(s), rng);
    for (auto& v : t.values()) v = (v < 0 ? -0.2 : 0.2) + v;
    return t;
  };
  const auto other = oracle::random_tensor<D>({2, 3, 4}, rng);
  const auto positive = [&] {
    auto t = oracle::random_tensor<D>({2, 3, 4}, rng);
    for (auto& v : t.values()) v = 0.5 + std::abs(v);
    return t;
  }();
  const auto x = oracle::random_tensor<D>({2, 3, 4}, rng);
  Tape<D> holder;

  struct Case {
    const char* name;
    std::function<Var<D>(Var<D>)> f;
    Tensor<D> input;
  };
  const Tensor<D> kernel = oracle::random_tensor<D>({3, 2, 3, 2}, rng);
  const Tensor<D> tkernel = oracle::random_tensor<D>({2, 3, 3, 2}, rng);
  const Tensor<D> w = oracle::random_tensor<D>({5, 24}, rng);
  const Tensor<D> bias = oracle::random_tensor<D>({2}, rng);
  ConvGeometry g;
  g.kh = 3;
  g.kw = 2;
  g.sh = 1;
  g.sw = 2;
  g.ph = 1;
  auto c = [](Var<D> v, const Tensor<D>& t) { return v.tape().constant(t); };
  std::vector<Case> cases = {
      {"add", [&](Var<D> v) { return add(v, c(v, other)); }, x},
      {"sub", [&](Var<D> v) { return sub(c(v, other), v); }, x},
      {"mul", [&](Var<D> v) { return mul(v, mul(v, c(v, other))); }, x},
      {"scale", [&](Var<D> v) { return scale(v, 3.0); }, x},
      {"neg", [&](Var<D> v) { return neg(add_scalar(v, 1.0)); }, x},
      {"sigmoid", [&](Var<D> v) { return sigmoid(v); }, x},
      {"relu", [&](Var<D> v) { return relu(v); }, away_from_zero({2, 3, 4})},
      {"tanh", [&](Var<D> v) { return tanh(v); }, x},
      {"exp", [&](Var<D> v) { return exp(v); }, x},
      {"log", [&](Var<D> v) { return log(v); }, positive},
      {"mean", [&](Var<D> v) { return mean(mul(v, v)); }, x},
      {"l1_norm", [&](Var<D> v) { return l1_norm(v); }, away_from_zero({2, 3, 4})},
      {"mse", [&](Var<D> v) { return mse(v, c(v, other)); }, x},
      {"conv2d input", [&](Var<D> v) { return conv2d(v, c(v, kernel), g); }, x},
      {"conv2d kernel", [&](Var<D> v) { return conv2d(c(v, x), v, g); }, kernel},
      {"conv transpose input", [&](Var<D> v) { return conv2d_transpose(v, c(v, tkernel), g); }, x},
      {"conv transpose kernel", [&](Var<D> v) { return conv2d_transpose(c(v, x), v, g); }, tkernel},
      {"channel bias", [&](Var<D> v) { return add_channel_bias(c(v, x), v); }, bias},
      {"scale channels x", [&](Var<D> v) { return scale_channels(v, c(v, bias)); }, x},
      {"scale channels g", [&](Var<D> v) { return scale_channels(c(v, x), v); }, bias},
      {"concat channels", [&](Var<D> v) { return concat_channels(v, mul(v, v)); }, x},
      {"slice channels", [&](Var<D> v) { return slice_channels(v, 1, 1); }, x},
      {"mean time", [&](Var<D> v) { return mean_time(v); }, x},
      {"time column", [&](Var<D> v) { return time_column(v, 2); }, x},
      {"reshape", [&](Var<D> v) { return reshape(v, Shape{6, 4}); }, x},
      {"concat", [&](Var<D> v) { return concat(v, v); }, x},
      {"affine x", [&](Var<D> v) { return affine(c(v, w), v, c(v, Tensor<D>(Shape{5}, 0.1))); }, x},
      {"affine w", [&](Var<D> v) { return affine(v, c(v, x), c(v, Tensor<D>(Shape{5}, 0.1))); }, w},
      {"matvec", [&](Var<D> v) { return matvec(c(v, w), v); }, x},
      {"softmax ce", [&](Var<D> v) { return softmax_cross_entropy(v, 1); }, oracle::random_tensor<D>({4}, rng)},
      {"kl mu", [&](Var<D> v) { return kl_std_normal(v, c(v, other)); }, x},
      {"kl logvar", [&](Var<D> v) { return kl_std_normal(c(v, other), v); }, x},
      {"reparam", [&](Var<D> v) { Rng r(9); return sample_reparam(v, scale(v, 0.5), r); }, x},
  };
  for (const auto& tc : cases) {
    CAPTURE(tc.name);
    const auto report = check_unary(tc.f, tc.input);
    CHECK(report.passed);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("conv loss gradient matches finite differences") {
  Rng rng(22);
  ParamSet<D> params;
  params.add("x", oracle::random_tensor<D>({2, 4, 6}, rng));
  params.add("k", oracle::random_tensor<D>({3, 2, 3, 3}, rng));
  const auto target = oracle::random_tensor<D>({3, 4, 3}, rng);
  ConvGeometry g;
  g.kh = g.kw = 3;
  g.sw = 2;
  g.ph = g.pw = 1;
  LossBuilder<D> build = [&](Tape<D>& tape, const ParamSet<D>& p) {
    return mse(conv2d(tape.param(p.at("x")), tape.param(p.at("k")), g), tape.constant(target));
  };
  const auto report = finite_diff_check(build, params);
  CHECK(report.passed);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("detach blocks gradient") {
  Tape<D> tape;
  auto x = tape.input(vec({1, 2}));
  auto loss = sum(mul(detach(x), x));
  tape.backward(loss);
  CHECK(tape.grad(x) == vec({1, 2}));
}

TEST_CASE("finite-difference checker") {
  ParamSet<D> params;
  params.add("w", vec({0.3, -1.2, 2.0}));
  SUBCASE("constant loss has zero error") {
    LossBuilder<D> build = [](Tape<D>& tape, const ParamSet<D>& p) {
      return sum(scale(tape.param(p.at("w"), false), 0.0));
    };
    CHECK(finite_diff_check(build, params).max_rel_error == 0.0);
  }
  SUBCASE("quadratic") {
    LossBuilder<D> build = [](Tape<D>& tape, const ParamSet<D>& p) {
      auto w = tape.param(p.at("w"));
      return sum(mul(w, w));
    };
    const auto report = finite_diff_check(build, params);
    CHECK(report.max_rel_error <= 1e-6);
    CHECK(report.worst_path.rfind("w[", 0) == 0);
  }
  SUBCASE("corrupted analytic gradient fails") {
    LossBuilder<D> build = [](Tape<D>& tape, const ParamSet<D>& p) {
      auto w = tape.param(p.at("w"));
      return sum(mul(w, w));
    };
    GradCheckOptions opt;
    opt.corrupt_analytic = true;
    const auto report = finite_diff_check(build, params, opt);
    CHECK_FALSE(report.passed);
    CHECK(report.worst_path == "w[0]");
  }
}

TEST_CASE("adam") {
  auto one_step = [](double grad, int steps) {
    ParamSet<D> params;
    params.add("p", Tensor<D>::scalar(0.0));
    auto state = make_adam_state(params, AdamConfig{});
    GradientSet<D> grads(params);
    for (int i = 0; i < steps; ++i) {
      grads[0][0] = grad;
      adam_step(params, grads, state);
    }
    return params[0].value[0];
  };
  CHECK(one_step(1.0, 1) == doctest::Approx(-0.001 / (1 + 1e-8)).epsilon(1e-12));
  CHECK(one_step(0.0, 5) == 0.0);

  // Scripted reference for two steps with constant gradient 0.5.
  double p = 0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    p -= 0.001 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(std::abs(one_step(0.5, 2) - p) <= 1e-12);

  ParamSet<D> params;
  params.add("p", Tensor<D>::scalar(0.0));
  AdamConfig bad;
  bad.b1 = 1.0;
  CHECK_THROWS_AS(make_adam_state(params, bad), Error);
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(31);
  const auto x = oracle::random_tensor<float>({2, 6, 8}, rng);
  const auto k = oracle::random_tensor<float>({3, 2, 3, 3}, rng);
  ConvGeometry g;
  g.kh = g.kw = 3;
  g.ph = g.pw = 1;
  CHECK(bit_equal(conv2d_forward(x, k, g), conv2d_forward(x, k, g)));
}
