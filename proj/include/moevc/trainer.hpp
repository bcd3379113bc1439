// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Training loop, held-out evaluation and the beta sweep.
//
// Each epoch draws one random window per training utterance, shuffles them
// and takes one Adam step per batch. Every random draw comes from a stream
// named after its purpose and epoch, so a resumed run continues exactly where
// an uninterrupted one would be.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "moevc/config.hpp"
#include "moevc/corpus.hpp"
#include "moevc/metrics.hpp"
#include "moevc/model.hpp"
#include "moevc/objective.hpp"

namespace moevc {

/// Per-epoch means over training items. Terms that were not built read 0.
struct EpochLog {
  std::size_t epoch = 0;
  double total = 0, recon = 0, lat = 0, mi = 0, ce = 0, ae = 0, spc = 0;
  double zero_gate_frac = 0;
};

std::string epoch_log_header();
std::string epoch_log_row(const EpochLog& row);

struct TrainOptions {
  std::filesystem::path out_model;  // empty: keep in memory only
  std::filesystem::path log_path;   // empty: no log file
  bool resume = false;
  std::ostream* progress = nullptr;
  // Overrides the objective implied by the architecture (plain VAE training).
  std::optional<Objective> objective;
};

template <typename T>
struct TrainResult {
  Model<T> model;
  std::vector<EpochLog> log;
};

/// Fills arch.feature_dim and arch.speakers from the corpus; values already
/// set in the config must agree with it.
RunConfig resolve_config(const RunConfig& config, const Corpus& corpus);

template <typename T>
TrainResult<T> train_model(const Corpus& corpus, const RunConfig& config, const TrainOptions& options = {});

struct EvalSummary {
  double mean_frr = 0.0;
  double mean_mcd_convert = 0.0;
  double mean_mcd_recon = 0.0;
  double mean_mcd_source = 0.0;  // untouched source vs target, for reference
  double zero_gate_frac = 0.0;
  std::size_t conversions = 0;
};

/// Converts every eval utterance to every other speaker that has the same
/// utterance, through the sparse engine.
template <typename T>
EvalSummary evaluate(const Model<T>& model, const Corpus& corpus);

struct SweepOptions {
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  std::filesystem::path model_dir;  // empty: models are not written
  std::ostream* progress = nullptr;
};

SweepReport run_sweep(const Corpus& corpus, const RunConfig& config, const SweepOptions& options);

}  // namespace moevc
