// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moevc/features.hpp"

namespace moevc {

enum class Split { kTrain, kEval };

const char* split_name(Split split);

struct ManifestEntry {
  std::string speaker_id;
  Split split = Split::kTrain;
  std::string path;  // relative to the manifest's directory
};

/// Line format: speaker_id<TAB>split<TAB>relative_path.
struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::string> speakers() const;  // sorted, unique
};

std::string format_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct SyntheticCorpusSpec {
  std::size_t speakers = 4;
  std::size_t utterances = 20;  // per speaker
  std::size_t frames = 256;
  std::size_t dim = 36;
  std::uint64_t seed = 1;
  double eval_fraction = 0.2;
};

inline constexpr const char* kManifestName = "manifest.tsv";

/// Writes <out>/<speaker>/uNNN.mfcb, <out>/<speaker>.f0stats (train split) and
/// <out>/manifest.tsv. Utterance k of every speaker is rendered from the same
/// content sequence, so equal file names across speakers are frame-aligned
/// parallel pairs.
Manifest gen_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir);

/// In-memory synthetic utterances, identical to what gen_synthetic_corpus writes.
std::vector<FeatureSeq> synthesize_speaker(const SyntheticCorpusSpec& spec, std::size_t speaker);

struct Utterance {
  std::size_t speaker = 0;  // index into Corpus::speakers
  std::string speaker_id;
  std::string name;         // file stem, shared by parallel utterances
  Split split = Split::kTrain;
  FeatureSeq features;
};

struct Corpus {
  std::vector<std::string> speakers;
  std::vector<Utterance> utterances;

  std::vector<const Utterance*> select(Split split) const;
  const Utterance* find(std::size_t speaker, const std::string& name, Split split) const;
  std::size_t speaker_index(const std::string& id) const;
  std::size_t dim() const { return utterances.empty() ? 0 : utterances.front().features.dim; }
};

Corpus load_corpus(const std::filesystem::path& manifest_path);

}  // namespace moevc
