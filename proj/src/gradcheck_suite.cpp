// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/gradcheck_suite.hpp"

#include <algorithm>
#include <sstream>

#include "moevc/error.hpp"
#include "moevc/model.hpp"
#include "moevc/objective.hpp"

namespace moevc {

bool GradCheckSuite::passed() const {
  return std::all_of(cases.begin(), cases.end(), [](const GradCheckCase& c) { return c.report.passed; });
}

const GradCheckCase& GradCheckSuite::worst() const {
  if (cases.empty()) throw Error(ErrorCode::kUsage, "empty gradient-check suite");
  return *std::max_element(cases.begin(), cases.end(), [](const GradCheckCase& a, const GradCheckCase& b) {
    return a.report.max_rel_error < b.report.max_rel_error;
  });
}

RunConfig tiny_gradcheck_config() {
  RunConfig c;
  c.arch.feature_dim = 4;
  c.arch.speakers = 2;
  c.arch.enc_channels = {2, 3};
  c.arch.kernel = {3, 3};
  c.arch.stride = {1, 2};
  c.arch.latent_channels = 2;
  c.arch.cls_channels = {2};
  c.arch.cls_kernel = {3, 3};
  c.arch.cls_stride = {1, 2};
  c.arch.een_channels = {2};
  c.arch.een_kernel = {3, 3};
  c.arch.een_stride = {2, 2};
  c.arch.een_hidden = {4};
  c.arch.embed_dim = 3;
  c.arch.den_state = 3;
  c.arch.den_hidden = {3};
  c.loss = {1.0, 1.0, 1.0, 1.0};
  c.train.segment = 8;
  c.train.seed = 7;
  c.train.precision = 64;
  return c;
}

GradCheckSuite run_gradcheck_suite(const RunConfig& config, const GradCheckOptions& options) {
  RunConfig cfg = config;
  if (cfg.arch.feature_dim == 0) cfg.arch.feature_dim = 4;
  if (cfg.arch.speakers == 0) cfg.arch.speakers = 2;
  cfg.arch.moe = true;
  cfg.arch.gating = GatingMode::kLearned;
  LossWeights weights = cfg.loss;
  for (double* w : {&weights.lambda_mi, &weights.lambda_ce, &weights.alpha, &weights.beta}) {
    if (*w == 0.0) *w = 1.0;
  }
  Model<double> model = create_model<double>(cfg);
  const ArchConfig& arch = cfg.arch;
  const std::uint64_t seed = cfg.train.seed;

  Rng input_rng(seed, "gradcheck/input");
  Tensor<double> x(Shape{1, arch.feature_dim, cfg.train.segment});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = input_rng.normal();
  const SpeakerCode code = one_hot(0, arch.speakers);

  // The MI term reads a frozen classifier; its finite differences must see
  // that classifier at the unperturbed values, as training does.
  const ParamSet<double> unperturbed = model.params;
  auto builder = [&](Objective objective, Var<double> LossTerms<double>::*term) -> LossBuilder<double> {
    return [=, &x, &arch, &unperturbed](Tape<double>& tape, const ParamSet<double>& params) {
      Rng reparam(seed, "gradcheck/reparam");
      Rng target(seed, "gradcheck/target");
      Net<double> net(tape, params);
      net.set_frozen_source(&unperturbed);
      LossTerms<double> terms =
          training_loss(net, arch, tape.constant(x), code, weights, objective, LossRngs{reparam, target});
      return terms.*term;
    };
  };

  struct Spec {
    const char* name;
    Objective objective;
    Var<double> LossTerms<double>::*term;
  };
  const Spec specs[] = {
      {"moe.recon", Objective::kMoe, &LossTerms<double>::recon},
      {"moe.lat", Objective::kMoe, &LossTerms<double>::lat},
      {"moe.mi", Objective::kMoe, &LossTerms<double>::mi},
      {"moe.ce", Objective::kMoe, &LossTerms<double>::ce},
      {"moe.ae", Objective::kMoe, &LossTerms<double>::ae},
      {"moe.spc", Objective::kMoe, &LossTerms<double>::spc},
      {"moe.total", Objective::kMoe, &LossTerms<double>::total},
      {"acvae.total", Objective::kAcvae, &LossTerms<double>::total},
      {"vae.total", Objective::kVae, &LossTerms<double>::total},
  };
  GradCheckSuite suite;
  for (const Spec& s : specs) {
    suite.cases.push_back({s.name, finite_diff_check(builder(s.objective, s.term), model.params, options)});
  }
  return suite;
}

std::string format_suite(const GradCheckSuite& suite) {
  std::ostringstream o;
  for (const auto& c : suite.cases) o << c.name << ": " << format_report(c.report) << "\n";
  if (!suite.cases.empty()) {
    const GradCheckCase& w = suite.worst();
    o << "worst: " << w.name << " " << w.report.worst_path << "\n";
  }
  o << (suite.passed() ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return o.str();
}

}  // namespace moevc
