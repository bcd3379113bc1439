// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moevc/adam.hpp"

namespace moevc {

enum class GatingMode { kLearned, kIdentity };

using Pair = std::array<std::size_t, 2>;

/// Network topology. feature_dim and speakers of 0 mean "take from the corpus".
struct ArchConfig {
  std::size_t feature_dim = 0;
  std::size_t speakers = 0;

  std::vector<std::size_t> enc_channels{8, 16, 16};
  Pair kernel{3, 9};
  Pair stride{1, 2};
  std::size_t latent_channels = 8;

  std::vector<std::size_t> cls_channels{8, 16};
  Pair cls_kernel{3, 9};
  Pair cls_stride{1, 2};

  bool moe = true;
  GatingMode gating = GatingMode::kLearned;
  std::vector<std::size_t> een_channels{4};
  Pair een_kernel{3, 3};
  Pair een_stride{2, 2};
  std::vector<std::size_t> een_hidden{32};
  std::size_t embed_dim = 32;
  std::size_t den_state = 32;
  std::vector<std::size_t> den_hidden{32};
};

struct LossWeights {
  double lambda_mi = 1.0;
  double lambda_ce = 1.0;
  double alpha = 1.0;
  double beta = 0.0;
};

struct TrainSettings {
  std::size_t epochs = 200;
  std::size_t segment = 128;
  std::size_t batch = 64;
  std::uint64_t seed = 1;
  int precision = 32;
  std::string log;  // per-epoch CSV; empty means <model>.log.csv
};

struct SweepSettings {
  std::vector<double> betas{0.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct RunConfig {
  ArchConfig arch;
  AdamConfig optimizer;
  LossWeights loss;
  TrainSettings train;
  SweepSettings sweep;
};

/// Parses flat `key = value` text with `#` comments. Unknown keys and
/// malformed values fail with the offending line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& config);
/// MOEVC_SEED, when set, replaces train.seed.
void apply_env_overrides(RunConfig& config);

}  // namespace moevc
