// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace moevc {

template <typename T>
GradCheckReport finite_diff_check(const LossBuilder<T>& build, ParamSet<T>& params,
                                  const GradCheckOptions& options) {
  GradientSet<T> analytic(params);
  double base = 0.0;
  {
    Tape<T> tape;
    Var<T> loss = build(tape, params);
    base = static_cast<double>(loss.value().item());
    tape.backward(loss);
    tape.accumulate_param_grads(analytic);
  }
  const double floor = options.abs_floor * std::max(1.0, std::abs(base));

  auto evaluate = [&]() {
    Tape<T> tape;
    return static_cast<double>(build(tape, params).value().item());
  };

  GradCheckReport report;
  const T h = static_cast<T>(options.step);
  bool corrupted = false;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = params[k];
    const std::size_t n = p.value.size();
    std::size_t stride = 1;
    if (options.max_per_param > 0 && n > options.max_per_param) {
      stride = (n + options.max_per_param - 1) / options.max_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const T saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate();
      p.value[i] = saved - h;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      double a = static_cast<double>(analytic[k][i]);
      if (options.corrupt_analytic && !corrupted) {
        a = a * 1.5 + 1.0;
        corrupted = true;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > options.tolerance) ++report.failures;
      if (rel > report.max_rel_error || report.worst_path.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_path = p.name + "[" + std::to_string(i) + "]";
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.passed = report.failures == 0;
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  os << (report.passed ? "PASS" : "FAIL") << " checked=" << report.checked
     << " failures=" << report.failures << " max_rel_error=" << report.max_rel_error
     << " worst=" << report.worst_path << " analytic=" << report.worst_analytic
     << " numeric=" << report.worst_numeric;
  return os.str();
}

template GradCheckReport finite_diff_check(const LossBuilder<float>&, ParamSet<float>&,
                                           const GradCheckOptions&);
template GradCheckReport finite_diff_check(const LossBuilder<double>&, ParamSet<double>&,
                                           const GradCheckOptions&);

}  // namespace moevc
