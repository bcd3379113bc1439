// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moevc/rng.hpp"
#include "moevc/tensor.hpp"

namespace moevc {

/// T x D spectral frames (row-major, one row per frame) with optional F0 in Hz
/// (0 marks an unvoiced frame).
struct FeatureSeq {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<float> f0;
  std::size_t speaker = 0;
  std::string utterance_id;

  float& at(std::size_t t, std::size_t d) { return values[t * dim + d]; }
  float at(std::size_t t, std::size_t d) const { return values[t * dim + d]; }
  void validate() const;
};

FeatureSeq make_feature_seq(std::size_t frames, std::size_t dim, std::vector<float> values,
                            std::vector<float> f0 = {});

// "MFCB" little-endian container: magic, version 0x01, u32 T, u32 D,
// T*D f32 row-major, u32 F0 count (0 or T), that many f32.
void write_feature_file(const FeatureSeq& seq, const std::filesystem::path& path);
FeatureSeq read_feature_file(const std::filesystem::path& path);
std::vector<unsigned char> encode_feature_bytes(const FeatureSeq& seq);
FeatureSeq decode_feature_bytes(std::span<const unsigned char> bytes);

struct StandardizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per-dimension mean and population standard deviation over every frame.
StandardizationStats compute_stats(std::span<const FeatureSeq> corpus);
FeatureSeq standardize(const FeatureSeq& seq, const StandardizationStats& stats);
FeatureSeq destandardize(const FeatureSeq& seq, const StandardizationStats& stats);
void write_stats_file(const StandardizationStats& stats, const std::filesystem::path& path);
StandardizationStats read_stats_file(const std::filesystem::path& path);
std::string format_stats(const StandardizationStats& stats);
StandardizationStats parse_stats(const std::string& text);

struct F0Stats {
  double log_mean = 0.0;
  double log_std = 1.0;
};

/// Log-domain mean/population std over voiced (non-zero) frames.
F0Stats compute_f0_stats(std::span<const double> f0);
F0Stats compute_f0_stats(std::span<const FeatureSeq> seqs);
std::vector<double> f0_convert(std::span<const double> f0, const F0Stats& src, const F0Stats& tgt);
std::vector<float> f0_convert(std::span<const float> f0, const F0Stats& src, const F0Stats& tgt);
void write_f0_stats_file(const F0Stats& stats, const std::filesystem::path& path);
F0Stats read_f0_stats_file(const std::filesystem::path& path);

struct SpeakerCode {
  std::size_t index = 0;
  std::size_t count = 0;

  template <typename T>
  Tensor<T> values() const {
    Tensor<T> out(Shape{count});
    out[index] = T{1};
    return out;
  }
};

SpeakerCode one_hot(std::size_t index, std::size_t speakers);

/// S x Q x N tensor with code value c[s] at every position of channel s.
template <typename T>
Tensor<T> tile_code(const SpeakerCode& code, std::size_t q, std::size_t n) {
  Tensor<T> out(Shape{code.count, q, n});
  const std::size_t plane = q * n;
  std::fill(out.data() + code.index * plane, out.data() + (code.index + 1) * plane, T{1});
  return out;
}

/// Contiguous length-L window at a uniform offset; sequences shorter than L
/// are cyclically extended from frame 0.
FeatureSeq sample_training_segment(const FeatureSeq& seq, std::size_t length, Rng& rng);

/// Network input layout: 1 x D x T with frames along the last axis.
template <typename T>
Tensor<T> to_network_input(const FeatureSeq& seq) {
  Tensor<T> x(Shape{1, seq.dim, seq.frames});
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t d = 0; d < seq.dim; ++d) x.at(0, d, t) = static_cast<T>(seq.at(t, d));
  return x;
}

template <typename T>
FeatureSeq from_network_output(const Tensor<T>& x) {
  FeatureSeq seq;
  seq.dim = x.dim(1);
  seq.frames = x.dim(2);
  seq.values.resize(seq.dim * seq.frames);
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t d = 0; d < seq.dim; ++d) seq.at(t, d) = static_cast<float>(x.at(0, d, t));
  return seq;
}

}  // namespace moevc
