// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moevc/features.hpp"

namespace moevc {

struct McdResult {
  double mcd_db = 0.0;
  std::size_t frames_compared = 0;
};

/// Mean over frames of (10 / ln 10) * sqrt(2 * sum_d (a_d - b_d)^2), all dimensions.
McdResult mcd(const FeatureSeq& a, const FeatureSeq& b);

struct SweepRow {
  double beta = 0.0;
  std::uint64_t seed = 0;
  double mean_frr = 0.0;
  double mean_mcd_convert = 0.0;
  double mean_mcd_recon = 0.0;
  double loss_recon = 0.0;
  double loss_lat = 0.0;
  double loss_mi = 0.0;
  double loss_ce = 0.0;
  double loss_ae = 0.0;
  double loss_spc = 0.0;
  double zero_gate_frac = 0.0;
};

struct BetaSummary {
  double beta = 0.0;
  double mean_frr = 0.0;
  double mean_mcd_convert = 0.0;
  double zero_gate_frac = 0.0;
  std::size_t runs = 0;
};

struct SweepReport {
  std::string csv;
  std::vector<BetaSummary> by_beta;  // ascending beta, seeds averaged
  std::string frr_trend;             // see trend()
  std::string mcd_trend;
  std::string summary;               // human-readable lines
};

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);
SweepRow parse_sweep_csv_row(const std::string& line);

/// Trend verdict: "increasing" when strictly increasing, "decreasing" when
/// strictly decreasing, otherwise "mixed".
std::string trend(const std::vector<double>& values);

SweepReport aggregate_sweep(std::vector<SweepRow> rows);

}  // namespace moevc
