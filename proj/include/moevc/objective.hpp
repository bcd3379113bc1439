// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Per-utterance training objectives. Terms whose weight is exactly zero are
// not built, so a zero-weighted objective is the same computation as the
// smaller one it reduces to.

#pragma once

#include <cstddef>
#include <vector>

#include "moevc/autodiff.hpp"
#include "moevc/config.hpp"
#include "moevc/features.hpp"
#include "moevc/net.hpp"

namespace moevc {

enum class Objective { kVae, kAcvae, kMoe };

/// Every term of one item's loss. Unbuilt terms are invalid Vars.
template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> recon, lat, mi, ce, ae, spc;
  std::vector<Var<T>> gates;  // reconstruction-pass gates, encoder then decoder
};

/// Random streams consumed by the objective: the reparameterisation noise and
/// the random target speaker for the conversion half of the MI term.
struct LossRngs {
  Rng& reparam;
  Rng& target;
};

template <typename T>
LossTerms<T> training_loss(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& code,
                           const LossWeights& weights, Objective objective, LossRngs rngs);

/// vae_loss.total - lambda_mi * MI + lambda_ce * CE on the ungated network.
template <typename T>
LossTerms<T> acvae_total_loss(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& code,
                              const LossWeights& weights, LossRngs rngs) {
  return training_loss(net, arch, x, code, weights, Objective::kAcvae, rngs);
}

/// The ACVAE objective through the gated network plus alpha * L_ae + beta * L_spc.
template <typename T>
LossTerms<T> moe_total_loss(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& code,
                            const LossWeights& weights, LossRngs rngs) {
  return training_loss(net, arch, x, code, weights, Objective::kMoe, rngs);
}

Objective objective_for(const ArchConfig& arch);

}  // namespace moevc
