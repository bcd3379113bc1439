// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/model.hpp"

#include <algorithm>

#include "moevc/acvae.hpp"
#include "moevc/binio.hpp"
#include "moevc/error.hpp"
#include "moevc/gated_vae.hpp"
#include "moevc/moe_gating.hpp"

namespace moevc {

namespace {

constexpr unsigned char kMagic[4] = {'M', 'V', 'C', 'M'};

template <typename T>
void put_values(ByteWriter& w, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (sizeof(T) == 4) {
      w.f32(t[i]);
    } else {
      w.f64(t[i]);
    }
  }
}

template <typename T>
void get_values(ByteReader& r, Tensor<T>& t, const char* what) {
  r.need(static_cast<std::uint64_t>(t.size()) * sizeof(T), what);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (sizeof(T) == 4) {
      t[i] = r.f32(what);
    } else {
      t[i] = r.f64(what);
    }
  }
}

}  // namespace

template <typename T>
std::size_t Model<T>::speaker_index(const std::string& id) const {
  const auto it = std::find(speakers.begin(), speakers.end(), id);
  if (it != speakers.end()) return static_cast<std::size_t>(it - speakers.begin());
  std::string known;
  for (const auto& s : speakers) known += (known.empty() ? "" : ", ") + s;
  throw Error(ErrorCode::kData, "unknown speaker '" + id + "'; known: " + known);
}

template <typename T>
Model<T> create_model(const RunConfig& config) {
  if (config.arch.feature_dim == 0 || config.arch.speakers < 2) {
    throw Error(ErrorCode::kConfig, "model needs a feature dimension and at least 2 speakers");
  }
  Model<T> m;
  m.config = config;
  const std::uint64_t seed = config.train.seed;
  init_vae_params(m.params, config.arch, seed);
  init_classifier_params(m.params, config.arch, seed);
  if (config.arch.moe) init_moe_params(m.params, config.arch, seed);
  return m;
}

template <typename T>
std::vector<unsigned char> encode_model_bytes(const Model<T>& model, const AdamState<T>* adam,
                                              std::uint64_t epochs_done) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kModelVersion);
  w.u8(static_cast<std::uint8_t>(sizeof(T)));
  w.str(format_config(model.config));
  w.u32(static_cast<std::uint32_t>(model.speakers.size()));
  for (const auto& s : model.speakers) w.str(s);
  w.u32(static_cast<std::uint32_t>(model.stats.mean.size()));
  for (double v : model.stats.mean) w.f64(v);
  for (double v : model.stats.std) w.f64(v);
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Parameter<T>& p = model.params[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    put_values(w, p.value);
  }
  w.u8(adam ? 1 : 0);
  if (adam) {
    w.u64(epochs_done);
    w.u64(adam->step);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      put_values(w, adam->m[i]);
      put_values(w, adam->v[i]);
    }
  }
  return std::move(w.bytes());
}

int model_precision(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::kBadMagic, "not a model container");
  }
  ByteReader r(bytes.subspan(4), "model");
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion) throw Error(ErrorCode::kBadVersion, "unsupported model version " + std::to_string(version));
  const std::uint8_t width = r.u8("scalar width");
  if (width != 4 && width != 8) throw Error(ErrorCode::kData, "model scalar width must be 4 or 8");
  return width * 8;
}

int model_precision(const std::filesystem::path& path) {
  return model_precision(read_file_bytes(path));
}

template <typename T>
Checkpoint<T> decode_model_bytes(std::span<const unsigned char> bytes) {
  if (model_precision(bytes) != static_cast<int>(sizeof(T) * 8)) {
    throw Error(ErrorCode::kData, "model stores " + std::to_string(model_precision(bytes)) + "-bit parameters");
  }
  ByteReader r(bytes.subspan(9), "model");
  const RunConfig config = parse_config(r.str("config"));
  Checkpoint<T> ck{create_model<T>(config), std::nullopt, 0};
  Model<T>& m = ck.model;

  const std::uint32_t speakers = r.u32("speaker count");
  for (std::uint32_t i = 0; i < speakers; ++i) m.speakers.push_back(r.str("speaker id"));
  if (m.speakers.size() != config.arch.speakers) throw Error(ErrorCode::kData, "speaker list does not match config");

  const std::uint32_t dim = r.u32("stats dimension");
  r.need(static_cast<std::uint64_t>(dim) * 16, "stats");
  m.stats.mean.resize(dim);
  m.stats.std.resize(dim);
  for (auto& v : m.stats.mean) v = r.f64("stats");
  for (auto& v : m.stats.std) v = r.f64("stats");

  const std::uint32_t count = r.u32("tensor count");
  if (count != m.params.size()) throw Error(ErrorCode::kData, "tensor count does not match config");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str("tensor name");
    if (!m.params.contains(name)) throw Error(ErrorCode::kData, "unexpected tensor '" + name + "'");
    Parameter<T>& p = m.params.at(name);
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("tensor shape"));
    if (shape != p.value.shape()) {
      throw Error(ErrorCode::kData, "tensor '" + name + "' has shape " + shape_str(shape) + ", config implies " +
                                        shape_str(p.value.shape()));
    }
    get_values(r, p.value, "tensor data");
  }

  if (r.u8("optimizer flag")) {
    ck.epochs_done = r.u64("epoch count");
    AdamState<T> adam = make_adam_state(m.params, config.optimizer);
    adam.step = r.u64("optimizer step");
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      get_values(r, adam.m[i], "optimizer moments");
      get_values(r, adam.v[i], "optimizer moments");
    }
    ck.adam = std::move(adam);
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kData, "trailing bytes after model payload");
  return ck;
}

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model, const AdamState<T>* adam,
                std::uint64_t epochs_done) {
  write_file_atomic(path, encode_model_bytes(model, adam, epochs_done));
}

template <typename T>
Checkpoint<T> load_model(const std::filesystem::path& path) {
  return decode_model_bytes<T>(read_file_bytes(path));
}

#define MOEVC_INSTANTIATE(T)                                                                            \
  template struct Model<T>;                                                                             \
  template Model<T> create_model<T>(const RunConfig&);                                                  \
  template std::vector<unsigned char> encode_model_bytes<T>(const Model<T>&, const AdamState<T>*,       \
                                                            std::uint64_t);                             \
  template Checkpoint<T> decode_model_bytes<T>(std::span<const unsigned char>);                         \
  template void save_model<T>(const std::filesystem::path&, const Model<T>&, const AdamState<T>*,       \
                              std::uint64_t);                                                           \
  template Checkpoint<T> load_model<T>(const std::filesystem::path&);

MOEVC_INSTANTIATE(float)
MOEVC_INSTANTIATE(double)

}  // namespace moevc
