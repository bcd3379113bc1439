// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference checks of every training loss term on a tiny 64-bit model.

#pragma once

#include <string>
#include <vector>

#include "moevc/config.hpp"
#include "moevc/gradcheck.hpp"

namespace moevc {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

struct GradCheckSuite {
  std::vector<GradCheckCase> cases;

  bool passed() const;
  /// The case with the largest relative error.
  const GradCheckCase& worst() const;
};

/// A deliberately small architecture; unset dimensions default to 4 features
/// and 2 speakers, and train.segment sets the probe length.
RunConfig tiny_gradcheck_config();

/// Checks recon, lat, mi, ce, ae, spc and the total of the gated objective
/// with every weight non-zero, plus the plain VAE and ACVAE totals.
GradCheckSuite run_gradcheck_suite(const RunConfig& config, const GradCheckOptions& options = {});

std::string format_suite(const GradCheckSuite& suite);

}  // namespace moevc
