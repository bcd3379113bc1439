// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/features.hpp"

#include "moevc/binio.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace moevc {
namespace {

constexpr unsigned char kMagic[4] = {'M', 'F', 'C', 'B'};
constexpr unsigned char kVersion = 0x01;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void FeatureSeq::validate() const {
  if (frames == 0 || dim == 0) throw Error(ErrorCode::kZeroDimension, "feature sequence needs T >= 1 and D >= 1");
  if (values.size() != frames * dim) throw Error(ErrorCode::kShape, "feature values do not match T x D");
  for (float v : values)
    if (!std::isfinite(v)) throw Error(ErrorCode::kData, "non-finite feature value in " + utterance_id);
  if (!f0.empty() && f0.size() != frames) throw Error(ErrorCode::kShape, "F0 length must be 0 or T");
  for (float v : f0)
    if (!(v >= 0.0f) || !std::isfinite(v)) throw Error(ErrorCode::kData, "F0 values must be finite and >= 0");
}

FeatureSeq make_feature_seq(std::size_t frames, std::size_t dim, std::vector<float> values,
                            std::vector<float> f0) {
  FeatureSeq seq;
  seq.frames = frames;
  seq.dim = dim;
  seq.values = std::move(values);
  seq.f0 = std::move(f0);
  seq.validate();
  return seq;
}

std::vector<unsigned char> encode_feature_bytes(const FeatureSeq& seq) {
  seq.validate();
  ByteWriter w;
  w.raw(kMagic);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(seq.frames));
  w.u32(static_cast<std::uint32_t>(seq.dim));
  for (float v : seq.values) w.f32(v);
  w.u32(static_cast<std::uint32_t>(seq.f0.size()));
  for (float v : seq.f0) w.f32(v);
  return std::move(w.bytes());
}

FeatureSeq decode_feature_bytes(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::kBadMagic, "not an MFCB feature file");
  }
  ByteReader r(bytes.subspan(4), "MFCB");
  const unsigned char version = r.u8("version");
  if (version != kVersion) throw Error(ErrorCode::kBadVersion, "unsupported MFCB version " + std::to_string(version));
  const std::uint32_t frames = r.u32("frame count");
  const std::uint32_t dim = r.u32("dimension");
  if (frames == 0 || dim == 0) {
    throw Error(ErrorCode::kZeroDimension, "MFCB header has T=" + std::to_string(frames) + " D=" + std::to_string(dim));
  }
  const std::uint64_t count = static_cast<std::uint64_t>(frames) * dim;
  r.need(count * 4, "frame data");
  FeatureSeq seq;
  seq.frames = frames;
  seq.dim = dim;
  seq.values.resize(count);
  for (auto& v : seq.values) v = r.f32("frame data");
  const std::uint32_t f0_count = r.u32("F0 count");
  if (f0_count != 0 && f0_count != frames) {
    throw Error(ErrorCode::kData, "MFCB F0 count must be 0 or T, got " + std::to_string(f0_count));
  }
  r.need(static_cast<std::size_t>(f0_count) * 4, "F0 data");
  seq.f0.resize(f0_count);
  for (auto& v : seq.f0) v = r.f32("F0 data");
  if (r.remaining() != 0) throw Error(ErrorCode::kData, "trailing bytes after MFCB payload");
  seq.validate();
  return seq;
}

void write_feature_file(const FeatureSeq& seq, const std::filesystem::path& path) {
  write_file_bytes(path, encode_feature_bytes(seq));
}

FeatureSeq read_feature_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  FeatureSeq seq = decode_feature_bytes(bytes);
  seq.utterance_id = path.stem().string();
  return seq;
}

// ---- standardization -------------------------------------------------------

StandardizationStats compute_stats(std::span<const FeatureSeq> corpus) {
  if (corpus.empty()) throw Error(ErrorCode::kData, "cannot compute statistics of an empty corpus");
  const std::size_t dim = corpus.front().dim;
  std::vector<double> sum(dim, 0.0);
  std::size_t n = 0;
  for (const auto& seq : corpus) {
    if (seq.dim != dim) throw Error(ErrorCode::kShape, "corpus mixes feature dimensions");
    for (std::size_t t = 0; t < seq.frames; ++t)
      for (std::size_t d = 0; d < dim; ++d) sum[d] += seq.at(t, d);
    n += seq.frames;
  }
  StandardizationStats stats;
  stats.mean.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) stats.mean[d] = sum[d] / static_cast<double>(n);
  std::vector<double> sq(dim, 0.0);
  for (const auto& seq : corpus)
    for (std::size_t t = 0; t < seq.frames; ++t)
      for (std::size_t d = 0; d < dim; ++d) {
        const double c = seq.at(t, d) - stats.mean[d];
        sq[d] += c * c;
      }
  stats.std.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    stats.std[d] = std::sqrt(sq[d] / static_cast<double>(n));
    if (!(stats.std[d] > 0.0)) {
      throw Error(ErrorCode::kZeroVariance, "feature dimension " + std::to_string(d) + " has zero variance");
    }
  }
  return stats;
}

namespace {

void check_stats(const FeatureSeq& seq, const StandardizationStats& stats) {
  if (stats.mean.size() != seq.dim || stats.std.size() != seq.dim) {
    throw Error(ErrorCode::kShape, "statistics have dimension " + std::to_string(stats.mean.size()) +
                                       ", features have " + std::to_string(seq.dim));
  }
}

}  // namespace

FeatureSeq standardize(const FeatureSeq& seq, const StandardizationStats& stats) {
  check_stats(seq, stats);
  FeatureSeq out = seq;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t d = 0; d < seq.dim; ++d)
      out.at(t, d) = static_cast<float>((static_cast<double>(seq.at(t, d)) - stats.mean[d]) / stats.std[d]);
  return out;
}

FeatureSeq destandardize(const FeatureSeq& seq, const StandardizationStats& stats) {
  check_stats(seq, stats);
  FeatureSeq out = seq;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t d = 0; d < seq.dim; ++d)
      out.at(t, d) = static_cast<float>(static_cast<double>(seq.at(t, d)) * stats.std[d] + stats.mean[d]);
  return out;
}

std::string format_stats(const StandardizationStats& stats) {
  std::string out = std::to_string(stats.mean.size()) + "\n";
  for (std::size_t d = 0; d < stats.mean.size(); ++d) out += (d ? " " : "") + fmt_double(stats.mean[d]);
  out += "\n";
  for (std::size_t d = 0; d < stats.std.size(); ++d) out += (d ? " " : "") + fmt_double(stats.std[d]);
  out += "\n";
  return out;
}

StandardizationStats parse_stats(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) throw Error(ErrorCode::kTruncated, std::string("stats file missing ") + what);
    return line;
  };
  std::size_t dim = 0;
  {
    std::istringstream ls(next_line("dimension line"));
    if (!(ls >> dim) || dim == 0) throw Error(ErrorCode::kZeroDimension, "stats file dimension must be >= 1");
  }
  auto read_row = [&](const char* what) {
    std::istringstream ls(next_line(what));
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (row.size() != dim) {
      throw Error(ErrorCode::kData, std::string("stats ") + what + " has " + std::to_string(row.size()) +
                                        " values, expected " + std::to_string(dim));
    }
    return row;
  };
  StandardizationStats stats;
  stats.mean = read_row("mean line");
  stats.std = read_row("std line");
  for (std::size_t d = 0; d < dim; ++d)
    if (!(stats.std[d] > 0.0)) throw Error(ErrorCode::kZeroVariance, "stats std for dimension " + std::to_string(d) + " is not positive");
  return stats;
}

void write_stats_file(const StandardizationStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << format_stats(stats);
}

StandardizationStats read_stats_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_stats(std::string(bytes.begin(), bytes.end()));
}

// ---- F0 --------------------------------------------------------------------

F0Stats compute_f0_stats(std::span<const double> f0) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : f0) {
    if (v < 0.0) throw Error(ErrorCode::kData, "negative F0 value");
    if (v > 0.0) {
      sum += std::log(v);
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::kData, "no voiced frames for F0 statistics");
  F0Stats s;
  s.log_mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : f0)
    if (v > 0.0) {
      const double c = std::log(v) - s.log_mean;
      sq += c * c;
    }
  s.log_std = std::sqrt(sq / static_cast<double>(n));
  if (!(s.log_std > 0.0)) throw Error(ErrorCode::kZeroVariance, "voiced log-F0 has zero variance");
  return s;
}

F0Stats compute_f0_stats(std::span<const FeatureSeq> seqs) {
  std::vector<double> all;
  for (const auto& s : seqs) all.insert(all.end(), s.f0.begin(), s.f0.end());
  return compute_f0_stats(all);
}

std::vector<double> f0_convert(std::span<const double> f0, const F0Stats& src, const F0Stats& tgt) {
  if (!(src.log_std > 0.0) || !(tgt.log_std > 0.0)) throw Error(ErrorCode::kData, "F0 statistics need log_std > 0");
  std::vector<double> out(f0.size());
  for (std::size_t i = 0; i < f0.size(); ++i) {
    if (f0[i] < 0.0) throw Error(ErrorCode::kData, "negative F0 at frame " + std::to_string(i));
    if (f0[i] == 0.0) {
      out[i] = 0.0;
      continue;
    }
    const double z = (std::log(f0[i]) - src.log_mean) / src.log_std;
    out[i] = std::exp(z * tgt.log_std + tgt.log_mean);
  }
  return out;
}

std::vector<float> f0_convert(std::span<const float> f0, const F0Stats& src, const F0Stats& tgt) {
  std::vector<double> wide(f0.begin(), f0.end());
  const auto converted = f0_convert(std::span<const double>(wide), src, tgt);
  return std::vector<float>(converted.begin(), converted.end());
}

void write_f0_stats_file(const F0Stats& stats, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << fmt_double(stats.log_mean) << " " << fmt_double(stats.log_std) << "\n";
}

F0Stats read_f0_stats_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  F0Stats s;
  if (!(in >> s.log_mean >> s.log_std)) throw Error(ErrorCode::kData, "malformed F0 stats file " + path.string());
  if (!(s.log_std > 0.0)) throw Error(ErrorCode::kData, "F0 stats need log_std > 0");
  return s;
}

// ---- codes and segments ----------------------------------------------------

SpeakerCode one_hot(std::size_t index, std::size_t speakers) {
  if (index >= speakers) {
    throw Error(ErrorCode::kRange, "speaker index " + std::to_string(index) + " out of range for " +
                                       std::to_string(speakers) + " speakers");
  }
  return SpeakerCode{index, speakers};
}

FeatureSeq sample_training_segment(const FeatureSeq& seq, std::size_t length, Rng& rng) {
  if (length == 0) throw Error(ErrorCode::kRange, "segment length must be >= 1");
  std::size_t offset = 0;
  if (seq.frames > length) offset = rng.index(seq.frames - length + 1);
  FeatureSeq out;
  out.frames = length;
  out.dim = seq.dim;
  out.speaker = seq.speaker;
  out.utterance_id = seq.utterance_id;
  out.values.resize(length * seq.dim);
  if (!seq.f0.empty()) out.f0.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t src = (offset + t) % seq.frames;
    std::copy(seq.values.begin() + src * seq.dim, seq.values.begin() + (src + 1) * seq.dim,
              out.values.begin() + t * seq.dim);
    if (!seq.f0.empty()) out.f0[t] = seq.f0[src];
  }
  return out;
}

}  // namespace moevc
