// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Per-utterance channel gating. The encoder embedding network (EEN) looks at
// the input and source code; the decoder embedding network (DEN) runs a GRU
// sequence autoencoder over z and looks at the target code. A sparse gating
// network (SGN) per gated layer maps an embedding to relu(W e + b).

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moevc/autodiff.hpp"
#include "moevc/config.hpp"
#include "moevc/features.hpp"
#include "moevc/gated_vae.hpp"
#include "moevc/net.hpp"

namespace moevc {

/// Gate values per gated layer: encoder layers first, then decoder layers.
template <typename T>
struct GateSet {
  std::vector<Tensor<T>> enc, dec;
};

template <typename T>
struct DenOutput {
  Var<T> embed;
  Var<T> l_ae;  // invalid unless the sequence decoder was run
};

template <typename T>
struct DecoderGates {
  std::vector<Var<T>> gates;
  Var<T> l_ae;
};

enum class ForwardMode { kReconstruct, kConvert };

template <typename T>
struct MoeForward {
  Var<T> output;
  LatentSeq<T> latent;
  std::vector<Var<T>> enc_gates, dec_gates;
  Var<T> l_ae;
};

template <typename T>
void init_moe_params(ParamSet<T>& params, const ArchConfig& arch, std::uint64_t seed);

/// Flattened GRU input size: latent channels times latent height.
std::size_t den_input_size(const ArchConfig& arch);

template <typename T>
Var<T> een_embed(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& source);

template <typename T>
DenOutput<T> den_embed(const Net<T>& net, const ArchConfig& arch, Var<T> z, const SpeakerCode& target,
                       bool reconstruct = true);

/// relu(affine) for the SGN named prefix, e.g. "sgn.enc.0".
template <typename T>
Var<T> sgn_gates(const Net<T>& net, const std::string& prefix, Var<T> e);

template <typename T>
Var<T> apply_gates(Var<T> h, Var<T> g) {
  return scale_channels(h, g);
}

/// Encoder gates for x. Identity gating yields constant ones.
template <typename T>
std::vector<Var<T>> encoder_gates(const Net<T>& net, const ArchConfig& arch, Var<T> x,
                                  const SpeakerCode& source);

/// Decoder gates for z; l_ae is filled when reconstruct is set and gating is learned.
template <typename T>
DecoderGates<T> decoder_gates(const Net<T>& net, const ArchConfig& arch, Var<T> z,
                              const SpeakerCode& target, bool reconstruct);

/// Deterministic gated forward (z = mu). forced, when given, replaces the
/// computed gate values after the gating networks have run.
template <typename T>
MoeForward<T> moe_forward(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& source,
                          const SpeakerCode& target, ForwardMode mode,
                          const GateSet<T>* forced = nullptr);

/// Mean absolute gate value over all entries of all layers.
template <typename T>
Var<T> l_spc(std::span<const Var<T>> gates);

template <typename T>
GateSet<T> gate_values(const MoeForward<T>& f);

/// Fraction of gate entries equal to exactly zero.
template <typename T>
double zero_gate_fraction(const GateSet<T>& gates);

}  // namespace moevc
