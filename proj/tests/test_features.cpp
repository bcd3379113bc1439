// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "moevc/binio.hpp"
#include "moevc/corpus.hpp"
#include "moevc/features.hpp"
#include "test_util.hpp"

using namespace moevc;
namespace fs = std::filesystem;

namespace {

ErrorCode decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode_feature_bytes(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected decode to throw");
  return ErrorCode::kUsage;
}

}  // namespace

TEST_CASE("MFCB round trip is bit exact") {
  FeatureSeq seq = make_feature_seq(3, 2, {1.5f, -0.0f, 3.25e-30f, 7.0f, -2.5f, 1e30f}, {0.0f, 120.5f, 99.0f});
  const auto bytes = encode_feature_bytes(seq);
  CHECK(bytes.size() == 4 + 1 + 4 + 4 + 6 * 4 + 4 + 3 * 4);
  const FeatureSeq back = decode_feature_bytes(bytes);
  CHECK(std::memcmp(back.values.data(), seq.values.data(), seq.values.size() * 4) == 0);
  CHECK(back.f0 == seq.f0);
  CHECK(encode_feature_bytes(back) == bytes);

  TempDir dir;
  write_feature_file(seq, dir.path / "a.mfcb");
  const FeatureSeq file = read_feature_file(dir.path / "a.mfcb");
  CHECK(file.utterance_id == "a");
  CHECK(encode_feature_bytes(file) == bytes);

  const FeatureSeq minimal = make_feature_seq(1, 36, std::vector<float>(36, 0.5f));
  CHECK(decode_feature_bytes(encode_feature_bytes(minimal)).dim == 36);
}

TEST_CASE("MFCB header corruption yields distinct errors") {
  const auto good = encode_feature_bytes(make_feature_seq(2, 2, {1, 2, 3, 4}));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(decode_error(bad_magic) == ErrorCode::kBadMagic);
  auto bad_version = good;
  bad_version[4] = 2;
  CHECK(decode_error(bad_version) == ErrorCode::kBadVersion);
  auto truncated = good;
  truncated.resize(good.size() - 3);
  CHECK(decode_error(truncated) == ErrorCode::kTruncated);
  auto header_only = std::vector<unsigned char>(good.begin(), good.begin() + 7);
  CHECK(decode_error(header_only) == ErrorCode::kTruncated);
  auto zero_dim = good;
  std::memset(zero_dim.data() + 9, 0, 4);
  CHECK(decode_error(zero_dim) == ErrorCode::kZeroDimension);
  auto trailing = good;
  trailing.push_back(0);
  CHECK(decode_error(trailing) == ErrorCode::kData);
  CHECK_THROWS_AS(make_feature_seq(1, 1, {NAN}), Error);
  CHECK_THROWS_AS(make_feature_seq(1, 1, {1.0f}, {-1.0f}), Error);
}

TEST_CASE("standardization statistics") {
  const FeatureSeq a = make_feature_seq(1, 2, {0, 2});
  const FeatureSeq b = make_feature_seq(1, 2, {2, 4});
  const std::vector<FeatureSeq> corpus{a, b};
  const auto stats = compute_stats(corpus);
  CHECK(stats.mean == std::vector<double>{1, 3});
  CHECK(stats.std == std::vector<double>{1, 1});  // population estimator

  const auto text = format_stats(stats);
  CHECK(format_stats(parse_stats(text)) == text);
  TempDir dir;
  write_stats_file(stats, dir.path / "s.txt");
  const auto back = read_stats_file(dir.path / "s.txt");
  CHECK(back.mean == stats.mean);
  CHECK(back.std == stats.std);

  const std::vector<FeatureSeq> flat{make_feature_seq(2, 2, {1, 5, 1, 6})};
  try {
    compute_stats(flat);
    FAIL("expected zero variance error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kZeroVariance);
    CHECK(std::string(e.what()).find("dimension 0") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_stats("2\n1 2\n1\n"), Error);
  CHECK_THROWS_AS(parse_stats("2\n1 2\n"), Error);
}

TEST_CASE("standardize and destandardize are inverse and normalise the corpus") {
  SyntheticCorpusSpec spec;
  spec.utterances = 3;
  spec.frames = 64;
  std::vector<FeatureSeq> all;
  for (std::size_t s = 0; s < spec.speakers; ++s)
    for (auto& u : synthesize_speaker(spec, s)) all.push_back(u);
  const auto stats = compute_stats(all);
  std::vector<double> sum(spec.dim, 0.0), sq(spec.dim, 0.0);
  std::size_t n = 0;
  for (const auto& u : all) {
    const auto z = standardize(u, stats);
    const auto back = destandardize(z, stats);
    for (std::size_t i = 0; i < u.values.size(); ++i)
      CHECK(std::abs(back.values[i] - u.values[i]) <= 1e-6 * std::max(1.0f, std::abs(u.values[i])));
    for (std::size_t t = 0; t < z.frames; ++t)
      for (std::size_t d = 0; d < z.dim; ++d) {
        sum[d] += z.at(t, d);
        sq[d] += double(z.at(t, d)) * z.at(t, d);
      }
    n += z.frames;
  }
  for (std::size_t d = 0; d < spec.dim; ++d) {
    CHECK(std::abs(sum[d] / n) <= 1e-5);
    CHECK(std::abs(std::sqrt(sq[d] / n) - 1.0) <= 1e-5);
  }
}

TEST_CASE("F0 conversion") {
  const F0Stats src{5.0, 0.2}, tgt{5.5, 0.1};
  const std::vector<double> f0{std::exp(5.2), 0.0};
  const auto out = f0_convert(std::span<const double>(f0), src, tgt);
  CHECK(std::log(out[0]) == doctest::Approx(5.6).epsilon(1e-12));
  CHECK(out[1] == 0.0);
  const auto same = f0_convert(std::span<const double>(f0), src, src);
  CHECK(same[0] == doctest::Approx(f0[0]).epsilon(1e-14));
  const std::vector<double> unvoiced(5, 0.0);
  CHECK(f0_convert(std::span<const double>(unvoiced), src, tgt) == unvoiced);
  const std::vector<double> negative{100.0, -1.0};
  CHECK_THROWS_AS(f0_convert(std::span<const double>(negative), src, tgt), Error);

  TempDir dir;
  write_f0_stats_file(tgt, dir.path / "t.f0stats");
  const auto back = read_f0_stats_file(dir.path / "t.f0stats");
  CHECK(back.log_mean == tgt.log_mean);
  CHECK(back.log_std == tgt.log_std);
}

TEST_CASE("speaker codes") {
  const auto code = one_hot(2, 4);
  CHECK(code.values<double>() == Tensor<double>(Shape{4}, {0, 0, 1, 0}));
  CHECK_THROWS_AS(one_hot(4, 4), Error);
  const auto tile = tile_code<double>(one_hot(0, 2), 2, 3);
  CHECK(tile.shape() == Shape{2, 2, 3});
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(tile[i] == 1.0);
    CHECK(tile[6 + i] == 0.0);
  }
}

TEST_CASE("training segments") {
  FeatureSeq seq = make_feature_seq(10, 1, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  Rng a(3), b(3);
  CHECK(sample_training_segment(seq, 4, a).values == sample_training_segment(seq, 4, b).values);
  Rng r(4);
  CHECK(sample_training_segment(seq, 10, r).values == seq.values);
  const auto cyc = sample_training_segment(make_feature_seq(3, 1, {7, 8, 9}), 7, r);
  CHECK(cyc.values == std::vector<float>{7, 8, 9, 7, 8, 9, 7});

  // Offsets 0..6 are uniform: each count within 5 sigma of n/7.
  const int n = 10000;
  std::vector<int> counts(7, 0);
  Rng m(5);
  for (int i = 0; i < n; ++i) {
    const auto s = sample_training_segment(seq, 4, m);
    ++counts[static_cast<int>(s.values[0])];
  }
  const double p = 1.0 / 7, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - n * p) <= 5 * sigma);
}

TEST_CASE("synthetic corpus") {
  TempDir dir;
  SyntheticCorpusSpec spec;
  spec.utterances = 20;
  const auto manifest = gen_synthetic_corpus(spec, dir.path / "a");
  CHECK(manifest.entries.size() == 80);
  gen_synthetic_corpus(spec, dir.path / "b");
  for (const auto& e : manifest.entries) {
    CHECK(read_file_bytes(dir.path / "a" / e.path) == read_file_bytes(dir.path / "b" / e.path));
  }
  CHECK(read_file_bytes(dir.path / "a" / kManifestName) == read_file_bytes(dir.path / "b" / kManifestName));

  SyntheticCorpusSpec one = spec;
  one.speakers = 1;
  CHECK_THROWS_AS(gen_synthetic_corpus(one, dir.path / "c"), Error);

  // Manifest round trip.
  const auto text = format_manifest(manifest);
  CHECK(format_manifest(parse_manifest(text)) == text);
  CHECK_THROWS_AS(parse_manifest("spk00\ttrain\n"), Error);
  CHECK_THROWS_AS(parse_manifest("spk00\tdev\ta.mfcb\n"), Error);

  // Speakers are linearly separable from per-utterance mean frames: a
  // nearest-centroid rule fitted on train utterances classifies held-out ones.
  const Corpus corpus = load_corpus(dir.path / "a" / kManifestName);
  const std::size_t d = corpus.dim(), s = corpus.speakers.size();
  auto mean_frame = [&](const FeatureSeq& f) {
    std::vector<double> m(d, 0.0);
    for (std::size_t t = 0; t < f.frames; ++t)
      for (std::size_t k = 0; k < d; ++k) m[k] += f.at(t, k) / f.frames;
    return m;
  };
  std::vector<std::vector<double>> centroid(s, std::vector<double>(d, 0.0));
  std::vector<int> count(s, 0);
  for (const Utterance* u : corpus.select(Split::kTrain)) {
    const auto m = mean_frame(u->features);
    for (std::size_t k = 0; k < d; ++k) centroid[u->speaker][k] += m[k];
    ++count[u->speaker];
  }
  for (std::size_t c = 0; c < s; ++c)
    for (auto& v : centroid[c]) v /= count[c];
  int correct = 0, total = 0;
  for (const Utterance* u : corpus.select(Split::kEval)) {
    const auto m = mean_frame(u->features);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < s; ++c) {
      double dist = 0;
      for (std::size_t k = 0; k < d; ++k) dist += (m[k] - centroid[c][k]) * (m[k] - centroid[c][k]);
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    correct += best == u->speaker;
    ++total;
  }
  CHECK(total == 16);
  CHECK(double(correct) / total > 0.9);
}
