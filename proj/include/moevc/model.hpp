// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// A trained model and its binary container.
//
// Layout (little-endian): "MVCM", u32 version, u8 scalar width in bytes,
// config text, speaker ids, standardization stats, named tensors, then an
// optional optimizer state for resuming. Strings are u32 length + bytes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moevc/adam.hpp"
#include "moevc/autodiff.hpp"
#include "moevc/config.hpp"
#include "moevc/features.hpp"

namespace moevc {

inline constexpr std::uint32_t kModelVersion = 1;

template <typename T>
struct Model {
  RunConfig config;  // arch.feature_dim and arch.speakers are resolved
  ParamSet<T> params;
  StandardizationStats stats;
  std::vector<std::string> speakers;

  const ArchConfig& arch() const { return config.arch; }
  std::size_t speaker_index(const std::string& id) const;
};

/// Fresh parameters for config.arch, initialised from config.train.seed.
/// Each component draws from its own stream, so the base network starts the
/// same whether or not gating networks are present.
template <typename T>
Model<T> create_model(const RunConfig& config);

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::optional<AdamState<T>> adam;
  std::uint64_t epochs_done = 0;
};

template <typename T>
std::vector<unsigned char> encode_model_bytes(const Model<T>& model, const AdamState<T>* adam = nullptr,
                                              std::uint64_t epochs_done = 0);
template <typename T>
Checkpoint<T> decode_model_bytes(std::span<const unsigned char> bytes);

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model, const AdamState<T>* adam = nullptr,
                std::uint64_t epochs_done = 0);
template <typename T>
Checkpoint<T> load_model(const std::filesystem::path& path);

/// 32 or 64, read from the container header.
int model_precision(std::span<const unsigned char> bytes);
int model_precision(const std::filesystem::path& path);

}  // namespace moevc
