// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Helpers shared by every network component: parameter binding onto a tape,
// initialisation, and the layer geometry of the base encoder/decoder.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "moevc/autodiff.hpp"
#include "moevc/config.hpp"
#include "moevc/rng.hpp"

namespace moevc {

/// Binds named parameters onto a tape, one leaf per parameter per tape.
template <typename T>
class Net {
 public:
  Net(Tape<T>& tape, const ParamSet<T>& params, bool trainable = true)
      : tape_(&tape), params_(&params), trainable_(trainable) {}

  Tape<T>& tape() const { return *tape_; }
  const ParamSet<T>& params() const { return *params_; }

  Var<T> operator()(std::string_view name) const { return bind(name, trainable_, cache_); }
  /// The same parameter as a constant: no gradient reaches it.
  Var<T> frozen(std::string_view name) const { return bind(name, false, frozen_cache_); }

  /// Reads frozen() parameters from another set with the same names. A
  /// finite-difference check uses this to hold frozen uses at their
  /// unperturbed values.
  void set_frozen_source(const ParamSet<T>* source) { frozen_source_ = source; }

 private:
  Var<T> bind(std::string_view name, bool trainable, std::map<std::string, Var<T>, std::less<>>& cache) const {
    if (auto it = cache.find(name); it != cache.end()) return it->second;
    const ParamSet<T>* from = (!trainable && frozen_source_ && &cache == &frozen_cache_) ? frozen_source_ : params_;
    Var<T> v = tape_->param(from->at(name), trainable);
    cache.emplace(std::string(name), v);
    return v;
  }

  Tape<T>* tape_;
  const ParamSet<T>* params_;
  bool trainable_;
  const ParamSet<T>* frozen_source_ = nullptr;
  mutable std::map<std::string, Var<T>, std::less<>> cache_;
  mutable std::map<std::string, Var<T>, std::less<>> frozen_cache_;
};

/// uniform(-a, a) with a = 1/sqrt(fan_in).
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng);
template <typename T>
Tensor<T> init_uniform_bound(Shape shape, double bound, Rng& rng);

/// Same-size padding for an odd kernel, floor((k-1)/2) otherwise.
ConvGeometry conv_geometry(const Pair& kernel, const Pair& stride);

struct Spatial {
  std::size_t q = 0, n = 0;
  bool operator==(const Spatial&) const = default;
};

/// One convolution of the base network as run at inference time.
struct BaseLayer {
  std::string name;
  std::size_t in_features = 0;  // channels coming from the previous layer
  std::size_t code_channels = 0;  // speaker-code channels appended to the input
  std::size_t out_channels = 0;
  ConvGeometry geom;
  bool transpose = false;
  bool glu = false;
  bool gated = false;  // output scaled by a gate vector when MoE is enabled
  Spatial in, out;
};

/// Spatial extents after each encoder layer, starting with the input.
std::vector<Spatial> encoder_chain(const ArchConfig& arch, std::size_t frames);
/// Encoder layers, the mean head, decoder layers and the output head, in
/// execution order. The log-variance head is not part of inference.
std::vector<BaseLayer> base_layers(const ArchConfig& arch, std::size_t frames);
/// Latent extent for an input of the given length.
Spatial latent_extent(const ArchConfig& arch, std::size_t frames);

/// Channel counts of the gated encoder layers, then the gated decoder layers.
std::vector<std::size_t> encoder_gate_sizes(const ArchConfig& arch);
std::vector<std::size_t> decoder_gate_sizes(const ArchConfig& arch);

}  // namespace moevc
