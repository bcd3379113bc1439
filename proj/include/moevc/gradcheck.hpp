// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "moevc/autodiff.hpp"

namespace moevc {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor * max(1, |loss|)).
  // Central-difference round-off grows with the loss value, so the floor does too.
  double abs_floor = 1e-6;
  // 0 checks every scalar; otherwise at most this many evenly spaced entries per parameter.
  std::size_t max_per_param = 0;
  // Test hook: perturbs the analytic gradient of the first checked entry.
  bool corrupt_analytic = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_path;  // e.g. "enc.0.W[17]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  bool passed = true;
};

template <typename T>
using LossBuilder = std::function<Var<T>(Tape<T>&, const ParamSet<T>&)>;

/// Central-difference check of every parameter's analytic gradient. The loss
/// builder must be deterministic (reseed any generator it uses on each call).
template <typename T>
GradCheckReport finite_diff_check(const LossBuilder<T>& build, ParamSet<T>& params,
                                  const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

}  // namespace moevc
