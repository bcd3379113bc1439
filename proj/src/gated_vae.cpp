// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/gated_vae.hpp"

#include "moevc/error.hpp"

namespace moevc {

template <typename T>
void init_vae_params(ParamSet<T>& params, const ArchConfig& arch, std::uint64_t seed) {
  Rng rng(seed, "init/vae");
  const std::size_t kh = arch.kernel[0], kw = arch.kernel[1];
  auto glu_layer = [&](const std::string& name, std::size_t cin, std::size_t cout, bool transpose) {
    const Shape shape = transpose ? Shape{cin, cout, kh, kw} : Shape{cout, cin, kh, kw};
    params.add(name + ".W", init_uniform<T>(shape, cin * kh * kw, rng));
    params.add(name + ".b", Tensor<T>(Shape{cout}));
    params.add(name + ".V", init_uniform<T>(shape, cin * kh * kw, rng));
    params.add(name + ".d", Tensor<T>(Shape{cout}));
  };

  std::size_t in = 1;
  for (std::size_t i = 0; i < arch.enc_channels.size(); ++i) {
    glu_layer("enc." + std::to_string(i), in, arch.enc_channels[i], false);
    in = arch.enc_channels[i];
  }
  const std::size_t cz = arch.latent_channels;
  for (const char* head : {"enc.mu", "enc.logvar"}) {
    params.add(std::string(head) + ".W", init_uniform<T>(Shape{cz, in, 1, 1}, in, rng));
    params.add(std::string(head) + ".b", Tensor<T>(Shape{cz}));
  }

  const auto dec_sizes = decoder_gate_sizes(arch);
  in = cz;
  for (std::size_t j = 0; j < dec_sizes.size(); ++j) {
    glu_layer("dec." + std::to_string(j), in + arch.speakers, dec_sizes[j], true);
    in = dec_sizes[j];
  }
  const std::size_t cin = in + arch.speakers;
  params.add("dec.out.W", init_uniform<T>(Shape{cin, 1, kh, kw}, cin * kh * kw, rng));
  params.add("dec.out.b", Tensor<T>(Shape{1}));
}

template <typename T>
Var<T> concat_code(Var<T> h, const SpeakerCode& code) {
  if (h.shape().size() != 3) throw Error(ErrorCode::kShape, "concat_code expects a C x Q x N map");
  return concat_channels(h, h.tape().constant(tile_code<T>(code, h.shape()[1], h.shape()[2])));
}

template <typename T>
Var<T> glu_forward(const Net<T>& net, const std::string& prefix, Var<T> h, const ConvGeometry& g,
                   bool transpose) {
  const Var<T> w = net(prefix + ".W"), v = net(prefix + ".V");
  const std::size_t cin_axis = transpose ? 0 : 1;
  if (h.shape().size() != 3 || h.shape()[0] != w.shape()[cin_axis]) {
    throw Error(ErrorCode::kShape, prefix + ": input has " + shape_str(h.shape()) + ", layer expects " +
                                       std::to_string(w.shape()[cin_axis]) + " channels");
  }
  auto conv = [&](Var<T> k) { return transpose ? conv2d_transpose(h, k, g) : conv2d(h, k, g); };
  const Var<T> linear = add_channel_bias(conv(w), net(prefix + ".b"));
  const Var<T> gate = sigmoid(add_channel_bias(conv(v), net(prefix + ".d")));
  return mul(linear, gate);
}

namespace {

template <typename T>
Var<T> apply_gate(Var<T> h, std::span<const Var<T>> gates, std::size_t i) {
  if (gates.empty()) return h;
  return scale_channels(h, gates[i]);
}

}  // namespace

template <typename T>
LatentSeq<T> encode(const Net<T>& net, const ArchConfig& arch, Var<T> x, Rng* rng,
                    std::span<const Var<T>> gates) {
  const std::size_t depth = arch.enc_channels.size();
  if (!gates.empty() && gates.size() != depth) {
    throw Error(ErrorCode::kShape, "encoder expects " + std::to_string(depth) + " gate vectors");
  }
  const ConvGeometry g = conv_geometry(arch.kernel, arch.stride);
  Var<T> h = x;
  for (std::size_t i = 0; i < depth; ++i) {
    h = apply_gate(glu_forward(net, "enc." + std::to_string(i), h, g, false), gates, i);
  }
  const ConvGeometry one;
  LatentSeq<T> out;
  out.mu = add_channel_bias(conv2d(h, net("enc.mu.W"), one), net("enc.mu.b"));
  out.logvar = add_channel_bias(conv2d(h, net("enc.logvar.W"), one), net("enc.logvar.b"));
  out.z = rng ? sample_reparam(out.mu, out.logvar, *rng) : out.mu;
  return out;
}

template <typename T>
Var<T> decode(const Net<T>& net, const ArchConfig& arch, Var<T> z, const SpeakerCode& code,
              std::size_t frames, std::span<const Var<T>> gates) {
  const auto layers = base_layers(arch, frames);
  const std::size_t gated = arch.enc_channels.size() - 1;
  if (!gates.empty() && gates.size() != gated) {
    throw Error(ErrorCode::kShape, "decoder expects " + std::to_string(gated) + " gate vectors");
  }
  if (code.count != arch.speakers) throw Error(ErrorCode::kShape, "speaker code length mismatch");
  Var<T> h = z;
  std::size_t j = 0;
  for (const BaseLayer& l : layers) {
    if (!l.transpose) continue;
    if (h.shape()[1] != l.in.q || h.shape()[2] != l.in.n) {
      throw Error(ErrorCode::kShape, l.name + ": unexpected input extent " + shape_str(h.shape()));
    }
    const Var<T> hc = concat_code(h, code);
    if (l.glu) {
      h = apply_gate(glu_forward(net, l.name, hc, l.geom, true), gates, j++);
    } else {
      h = add_channel_bias(conv2d_transpose(hc, net(l.name + ".W"), l.geom), net(l.name + ".b"));
    }
  }
  return h;
}

template <typename T>
VaeTerms<T> vae_terms(Var<T> x, Var<T> xbar, const LatentSeq<T>& latent) {
  VaeTerms<T> t;
  t.recon = scale(mse(x, xbar), static_cast<T>(0.5 * static_cast<double>(x.value().size())));
  t.lat = kl_std_normal(latent.mu, latent.logvar);
  t.total = add(t.recon, t.lat);
  return t;
}

template <typename T>
VaeTerms<T> vae_loss(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& code,
                     Rng& rng) {
  const LatentSeq<T> latent = encode(net, arch, x, &rng);
  const Var<T> xbar = decode(net, arch, latent.z, code, x.shape()[2]);
  return vae_terms(x, xbar, latent);
}

template <typename T>
Var<T> convert(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& target) {
  const LatentSeq<T> latent = encode(net, arch, x, static_cast<Rng*>(nullptr));
  return decode(net, arch, latent.z, target, x.shape()[2]);
}

#define MOEVC_INSTANTIATE(T)                                                                      \
  template void init_vae_params<T>(ParamSet<T>&, const ArchConfig&, std::uint64_t);               \
  template Var<T> concat_code<T>(Var<T>, const SpeakerCode&);                                     \
  template Var<T> glu_forward<T>(const Net<T>&, const std::string&, Var<T>, const ConvGeometry&, \
                                 bool);                                                           \
  template LatentSeq<T> encode<T>(const Net<T>&, const ArchConfig&, Var<T>, Rng*,                \
                                  std::span<const Var<T>>);                                       \
  template Var<T> decode<T>(const Net<T>&, const ArchConfig&, Var<T>, const SpeakerCode&,        \
                            std::size_t, std::span<const Var<T>>);                               \
  template VaeTerms<T> vae_terms<T>(Var<T>, Var<T>, const LatentSeq<T>&);                         \
  template VaeTerms<T> vae_loss<T>(const Net<T>&, const ArchConfig&, Var<T>, const SpeakerCode&, \
                                   Rng&);                                                         \
  template Var<T> convert<T>(const Net<T>&, const ArchConfig&, Var<T>, const SpeakerCode&);

MOEVC_INSTANTIATE(float)
MOEVC_INSTANTIATE(double)

}  // namespace moevc
