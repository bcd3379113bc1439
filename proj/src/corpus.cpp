// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace moevc {
namespace {

constexpr double kArCoefficient = 0.95;
constexpr double kNoiseStd = 0.01;

std::string speaker_name(std::size_t s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%02zu", s);
  return buf;
}

std::string utterance_name(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%03zu", k);
  return buf;
}

struct SpeakerTransform {
  std::vector<double> a;      // D x D, identity plus a perturbation of spectral norm <= 0.4
  std::vector<double> b;      // D offset
  std::vector<double> gamma;  // D tanh coloration weights
  double f0_log_mean = 0.0;
  double f0_log_std = 0.0;
};

SpeakerTransform make_speaker(const SyntheticCorpusSpec& spec, std::size_t s) {
  Rng rng(spec.seed, "speaker/" + std::to_string(s));
  const std::size_t d = spec.dim;
  SpeakerTransform tr;
  std::vector<double> r(d * d);
  double frob = 0.0;
  for (auto& v : r) {
    v = rng.normal();
    frob += v * v;
  }
  frob = std::sqrt(frob);
  tr.a.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) tr.a[i * d + j] = (i == j ? 1.0 : 0.0) + 0.4 * r[i * d + j] / frob;
  tr.b.resize(d);
  for (auto& v : tr.b) v = 1.5 * rng.normal();
  tr.gamma.resize(d);
  for (auto& v : tr.gamma) v = rng.uniform(-1.0, 1.0);
  tr.f0_log_mean = rng.uniform(std::log(100.0), std::log(250.0));
  tr.f0_log_std = rng.uniform(0.08, 0.25);
  return tr;
}

// Shared AR(1) content for utterance k: frames x dim.
std::vector<double> make_content(const SyntheticCorpusSpec& spec, std::size_t k) {
  Rng rng(spec.seed, "content/" + std::to_string(k));
  const std::size_t d = spec.dim;
  const double stationary = 1.0 / std::sqrt(1.0 - kArCoefficient * kArCoefficient);
  std::vector<double> c(spec.frames * d);
  for (std::size_t j = 0; j < d; ++j) c[j] = stationary * rng.normal();
  for (std::size_t t = 1; t < spec.frames; ++t)
    for (std::size_t j = 0; j < d; ++j) c[t * d + j] = kArCoefficient * c[(t - 1) * d + j] + rng.normal();
  return c;
}

std::size_t eval_count(const SyntheticCorpusSpec& spec) {
  if (spec.utterances < 2) return 0;
  auto n = static_cast<std::size_t>(std::llround(spec.eval_fraction * static_cast<double>(spec.utterances)));
  return std::min(n, spec.utterances - 1);
}

void validate_spec(const SyntheticCorpusSpec& spec) {
  if (spec.speakers < 2) throw Error(ErrorCode::kUsage, "synthetic corpus needs at least 2 speakers");
  if (spec.utterances == 0 || spec.frames == 0 || spec.dim == 0) {
    throw Error(ErrorCode::kUsage, "utterances, frames and dim must be >= 1");
  }
}

}  // namespace

const char* split_name(Split split) { return split == Split::kTrain ? "train" : "eval"; }

std::vector<std::string> Manifest::speakers() const {
  std::set<std::string> ids;
  for (const auto& e : entries) ids.insert(e.speaker_id);
  return {ids.begin(), ids.end()};
}

std::string format_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) out += e.speaker_id + "\t" + split_name(e.split) + "\t" + e.path + "\n";
  return out;
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty()) {
      throw Error(ErrorCode::kData, "manifest line " + std::to_string(lineno) + ": expected speaker<TAB>split<TAB>path");
    }
    ManifestEntry e;
    e.speaker_id = fields[0];
    if (fields[1] == "train") {
      e.split = Split::kTrain;
    } else if (fields[1] == "eval") {
      e.split = Split::kEval;
    } else {
      throw Error(ErrorCode::kData, "manifest line " + std::to_string(lineno) + ": unknown split '" + fields[1] + "'");
    }
    e.path = fields[2];
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << format_manifest(manifest);
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  return parse_manifest(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::vector<FeatureSeq> synthesize_speaker(const SyntheticCorpusSpec& spec, std::size_t speaker) {
  validate_spec(spec);
  const SpeakerTransform tr = make_speaker(spec, speaker);
  const std::size_t d = spec.dim;
  const double stationary = 1.0 / std::sqrt(1.0 - kArCoefficient * kArCoefficient);
  std::vector<FeatureSeq> out;
  for (std::size_t k = 0; k < spec.utterances; ++k) {
    const std::vector<double> c = make_content(spec, k);
    Rng noise(spec.seed, "noise/" + std::to_string(speaker) + "/" + std::to_string(k));
    FeatureSeq seq;
    seq.frames = spec.frames;
    seq.dim = d;
    seq.speaker = speaker;
    seq.utterance_id = speaker_name(speaker) + "/" + utterance_name(k);
    seq.values.resize(spec.frames * d);
    seq.f0.resize(spec.frames);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      const double* ct = c.data() + t * d;
      for (std::size_t i = 0; i < d; ++i) {
        double acc = tr.b[i] + tr.gamma[i] * std::tanh(ct[i]) + kNoiseStd * noise.normal();
        for (std::size_t j = 0; j < d; ++j) acc += tr.a[i * d + j] * ct[j];
        seq.values[t * d + i] = static_cast<float>(acc);
      }
      // Voicing follows the shared content, pitch the speaker's log-normal stats.
      const double drive = ct[0] / stationary;
      const double pitch = d > 1 ? ct[1] / stationary : drive;
      seq.f0[t] = drive > -0.3 ? static_cast<float>(std::exp(tr.f0_log_mean + tr.f0_log_std * pitch)) : 0.0f;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Manifest gen_synthetic_corpus(const SyntheticCorpusSpec& spec, const std::filesystem::path& out_dir) {
  validate_spec(spec);
  std::filesystem::create_directories(out_dir);
  const std::size_t n_eval = eval_count(spec);
  const std::size_t n_train = spec.utterances - n_eval;
  Manifest manifest;
  for (std::size_t s = 0; s < spec.speakers; ++s) {
    const std::string spk = speaker_name(s);
    std::filesystem::create_directories(out_dir / spk);
    std::vector<FeatureSeq> utts = synthesize_speaker(spec, s);
    for (std::size_t k = 0; k < utts.size(); ++k) {
      const std::string rel = spk + "/" + utterance_name(k) + ".mfcb";
      write_feature_file(utts[k], out_dir / rel);
      manifest.entries.push_back({spk, k < n_train ? Split::kTrain : Split::kEval, rel});
    }
    write_f0_stats_file(compute_f0_stats(std::span<const FeatureSeq>(utts.data(), n_train)),
                        out_dir / (spk + ".f0stats"));
  }
  write_manifest(manifest, out_dir / kManifestName);
  return manifest;
}

std::vector<const Utterance*> Corpus::select(Split split) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances)
    if (u.split == split) out.push_back(&u);
  return out;
}

const Utterance* Corpus::find(std::size_t speaker, const std::string& name, Split split) const {
  for (const auto& u : utterances)
    if (u.speaker == speaker && u.name == name && u.split == split) return &u;
  return nullptr;
}

std::size_t Corpus::speaker_index(const std::string& id) const {
  auto it = std::find(speakers.begin(), speakers.end(), id);
  if (it == speakers.end()) {
    std::string known;
    for (const auto& s : speakers) known += (known.empty() ? "" : ", ") + s;
    throw Error(ErrorCode::kData, "unknown speaker '" + id + "' (known: " + known + ")");
  }
  return static_cast<std::size_t>(it - speakers.begin());
}

Corpus load_corpus(const std::filesystem::path& manifest_path) {
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.entries.empty()) throw Error(ErrorCode::kData, "manifest lists no utterances");
  const std::filesystem::path root = manifest_path.parent_path();
  Corpus corpus;
  corpus.speakers = manifest.speakers();
  for (const auto& e : manifest.entries) {
    Utterance u;
    u.speaker = corpus.speaker_index(e.speaker_id);
    u.speaker_id = e.speaker_id;
    u.split = e.split;
    u.name = std::filesystem::path(e.path).stem().string();
    u.features = read_feature_file(root / e.path);
    u.features.speaker = u.speaker;
    u.features.utterance_id = e.speaker_id + "/" + u.name;
    if (!corpus.utterances.empty() && u.features.dim != corpus.dim()) {
      throw Error(ErrorCode::kShape, "utterance " + u.features.utterance_id + " has a different feature dimension");
    }
    corpus.utterances.push_back(std::move(u));
  }
  for (std::size_t s = 0; s < corpus.speakers.size(); ++s) {
    bool has_train = false;
    for (const auto& u : corpus.utterances) has_train = has_train || (u.speaker == s && u.split == Split::kTrain);
    if (!has_train) throw Error(ErrorCode::kData, "speaker " + corpus.speakers[s] + " has no train utterance");
  }
  return corpus;
}

}  // namespace moevc
