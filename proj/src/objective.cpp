// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/objective.hpp"

#include <span>

#include "moevc/acvae.hpp"
#include "moevc/error.hpp"
#include "moevc/gated_vae.hpp"
#include "moevc/moe_gating.hpp"

namespace moevc {

Objective objective_for(const ArchConfig& arch) {
  return arch.moe ? Objective::kMoe : Objective::kAcvae;
}

template <typename T>
LossTerms<T> training_loss(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& code,
                           const LossWeights& weights, Objective objective, LossRngs rngs) {
  const bool gated = objective == Objective::kMoe;
  if (gated && !arch.moe) throw Error(ErrorCode::kConfig, "gated objective needs gating networks");
  const std::size_t frames = x.shape()[2];
  LossTerms<T> out;

  std::vector<Var<T>> enc_gates;
  if (gated) enc_gates = encoder_gates(net, arch, x, code);
  const LatentSeq<T> latent = encode(net, arch, x, &rngs.reparam, std::span<const Var<T>>(enc_gates));

  DecoderGates<T> dec;
  if (gated) dec = decoder_gates(net, arch, latent.z, code, weights.alpha != 0.0);
  const Var<T> xbar = decode(net, arch, latent.z, code, frames, std::span<const Var<T>>(dec.gates));

  const VaeTerms<T> vae = vae_terms(x, xbar, latent);
  out.recon = vae.recon;
  out.lat = vae.lat;
  out.total = vae.total;
  if (objective == Objective::kVae) return out;

  if (weights.lambda_mi != 0.0) {
    const SpeakerCode random{rngs.target.index(arch.speakers), arch.speakers};
    std::vector<Var<T>> conv_gates;
    if (gated) conv_gates = decoder_gates(net, arch, latent.z, random, false).gates;
    const Var<T> xhat = decode(net, arch, latent.z, random, frames, std::span<const Var<T>>(conv_gates));
    out.mi = scale(add(mi_term(net, arch, xbar, code.index), mi_term(net, arch, xhat, random.index)), T{0.5});
    out.total = sub(out.total, scale(out.mi, static_cast<T>(weights.lambda_mi)));
  }
  if (weights.lambda_ce != 0.0) {
    out.ce = ce_term(net, arch, x, code.index);
    out.total = add(out.total, scale(out.ce, static_cast<T>(weights.lambda_ce)));
  }
  if (!gated) return out;

  out.gates = enc_gates;
  out.gates.insert(out.gates.end(), dec.gates.begin(), dec.gates.end());
  if (dec.l_ae.valid()) {
    out.ae = dec.l_ae;
    out.total = add(out.total, scale(out.ae, static_cast<T>(weights.alpha)));
  }
  out.spc = l_spc(std::span<const Var<T>>(out.gates));
  if (weights.beta != 0.0) out.total = add(out.total, scale(out.spc, static_cast<T>(weights.beta)));
  return out;
}

template LossTerms<float> training_loss<float>(const Net<float>&, const ArchConfig&, Var<float>,
                                               const SpeakerCode&, const LossWeights&, Objective, LossRngs);
template LossTerms<double> training_loss<double>(const Net<double>&, const ArchConfig&, Var<double>,
                                                 const SpeakerCode&, const LossWeights&, Objective, LossRngs);

}  // namespace moevc
