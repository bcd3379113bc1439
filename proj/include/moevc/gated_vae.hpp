// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Gated-CNN variational autoencoder conditioned on a one-hot speaker code.
// The encoder sees features only; every decoder layer receives the code as
// extra constant channels.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "moevc/autodiff.hpp"
#include "moevc/config.hpp"
#include "moevc/features.hpp"
#include "moevc/net.hpp"

namespace moevc {

template <typename T>
struct LatentSeq {
  Var<T> mu, logvar, z;
};

template <typename T>
struct VaeTerms {
  Var<T> recon, lat, total;
};

template <typename T>
void init_vae_params(ParamSet<T>& params, const ArchConfig& arch, std::uint64_t seed);

/// [h; tile(c)] along the channel axis.
template <typename T>
Var<T> concat_code(Var<T> h, const SpeakerCode& code);

/// (W*h + b) * sigmoid(V*h + d) for the layer whose parameters are prefix.{W,b,V,d}.
template <typename T>
Var<T> glu_forward(const Net<T>& net, const std::string& prefix, Var<T> h, const ConvGeometry& g,
                   bool transpose);

/// x is 1 x D x N. With rng, z is a reparameterised sample; without, z = mu.
/// When gates are given, gates[i] scales the output channels of encoder layer i.
template <typename T>
LatentSeq<T> encode(const Net<T>& net, const ArchConfig& arch, Var<T> x, Rng* rng,
                    std::span<const Var<T>> gates = {});

/// Maps z back to a 1 x D x N feature map for the given original length N.
template <typename T>
Var<T> decode(const Net<T>& net, const ArchConfig& arch, Var<T> z, const SpeakerCode& code,
              std::size_t frames, std::span<const Var<T>> gates = {});

/// 0.5 * squared error summed over x (unit-variance Gaussian likelihood) and
/// the KL divergence of the posterior from N(0, I).
template <typename T>
VaeTerms<T> vae_terms(Var<T> x, Var<T> xbar, const LatentSeq<T>& latent);

template <typename T>
VaeTerms<T> vae_loss(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& code,
                     Rng& rng);

/// decode(mu(x), target) without gating.
template <typename T>
Var<T> convert(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& target);

}  // namespace moevc
