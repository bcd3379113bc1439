// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/net.hpp"

#include <cmath>

#include "moevc/error.hpp"

namespace moevc {

template <typename T>
Tensor<T> init_uniform_bound(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  return init_uniform_bound<T>(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

ConvGeometry conv_geometry(const Pair& kernel, const Pair& stride) {
  ConvGeometry g;
  g.kh = kernel[0];
  g.kw = kernel[1];
  g.sh = stride[0];
  g.sw = stride[1];
  g.ph = (kernel[0] - 1) / 2;
  g.pw = (kernel[1] - 1) / 2;
  return g;
}

std::vector<Spatial> encoder_chain(const ArchConfig& arch, std::size_t frames) {
  if (arch.feature_dim == 0) throw Error(ErrorCode::kConfig, "feature dimension is not set");
  const ConvGeometry g = conv_geometry(arch.kernel, arch.stride);
  std::vector<Spatial> chain{{arch.feature_dim, frames}};
  for (std::size_t i = 0; i < arch.enc_channels.size(); ++i) {
    const Spatial& s = chain.back();
    chain.push_back({conv_out_extent(s.q, g.kh, g.sh, g.ph), conv_out_extent(s.n, g.kw, g.sw, g.pw)});
  }
  return chain;
}

Spatial latent_extent(const ArchConfig& arch, std::size_t frames) {
  return encoder_chain(arch, frames).back();
}

namespace {

// Output padding that makes a transposed layer land exactly on `target`.
std::size_t output_padding(std::size_t in, std::size_t target, std::size_t k, std::size_t s,
                           std::size_t p) {
  const long long base = (static_cast<long long>(in) - 1) * static_cast<long long>(s) -
                         2 * static_cast<long long>(p) + static_cast<long long>(k);
  const long long op = static_cast<long long>(target) - base;
  if (op < 0 || op >= static_cast<long long>(s)) {
    throw Error(ErrorCode::kShape, "decoder cannot restore extent " + std::to_string(target) +
                                       " from " + std::to_string(in));
  }
  return static_cast<std::size_t>(op);
}

}  // namespace

std::vector<BaseLayer> base_layers(const ArchConfig& arch, std::size_t frames) {
  const auto chain = encoder_chain(arch, frames);
  const ConvGeometry g = conv_geometry(arch.kernel, arch.stride);
  const std::size_t depth = arch.enc_channels.size();
  std::vector<BaseLayer> layers;

  std::size_t in = 1;
  for (std::size_t i = 0; i < depth; ++i) {
    BaseLayer l;
    l.name = "enc." + std::to_string(i);
    l.in_features = in;
    l.out_channels = arch.enc_channels[i];
    l.geom = g;
    l.glu = true;
    l.gated = arch.moe;
    l.in = chain[i];
    l.out = chain[i + 1];
    layers.push_back(l);
    in = l.out_channels;
  }

  BaseLayer mu;
  mu.name = "enc.mu";
  mu.in_features = in;
  mu.out_channels = arch.latent_channels;
  mu.in = mu.out = chain[depth];
  layers.push_back(mu);
  in = arch.latent_channels;

  for (std::size_t j = 0; j < depth; ++j) {
    const bool head = j + 1 == depth;
    BaseLayer l;
    l.name = head ? "dec.out" : "dec." + std::to_string(j);
    l.in_features = in;
    l.code_channels = arch.speakers;
    l.out_channels = head ? 1 : arch.enc_channels[depth - 2 - j];
    l.geom = g;
    l.transpose = true;
    l.glu = !head;
    l.gated = !head && arch.moe;
    l.in = chain[depth - j];
    l.out = chain[depth - 1 - j];
    l.geom.oph = output_padding(l.in.q, l.out.q, g.kh, g.sh, g.ph);
    l.geom.opw = output_padding(l.in.n, l.out.n, g.kw, g.sw, g.pw);
    layers.push_back(l);
    in = l.out_channels;
  }
  return layers;
}

std::vector<std::size_t> encoder_gate_sizes(const ArchConfig& arch) {
  return arch.enc_channels;
}

std::vector<std::size_t> decoder_gate_sizes(const ArchConfig& arch) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j + 1 < arch.enc_channels.size(); ++j) {
    out.push_back(arch.enc_channels[arch.enc_channels.size() - 2 - j]);
  }
  return out;
}

template Tensor<float> init_uniform<float>(Shape, std::size_t, Rng&);
template Tensor<double> init_uniform<double>(Shape, std::size_t, Rng&);
template Tensor<float> init_uniform_bound<float>(Shape, double, Rng&);
template Tensor<double> init_uniform_bound<double>(Shape, double, Rng&);

}  // namespace moevc
