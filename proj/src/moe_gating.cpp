// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/moe_gating.hpp"

#include <cmath>

#include "moevc/error.hpp"

namespace moevc {

namespace {

std::size_t een_pooled_height(const ArchConfig& arch) {
  const ConvGeometry g = conv_geometry(arch.een_kernel, arch.een_stride);
  std::size_t q = arch.feature_dim;
  for (std::size_t i = 0; i < arch.een_channels.size(); ++i) q = conv_out_extent(q, g.kh, g.sh, g.ph);
  return q;
}

template <typename T>
void add_dense(ParamSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  params.add(name + ".W", init_uniform<T>(Shape{out, in}, in, rng));
  params.add(name + ".b", Tensor<T>(Shape{out}));
}

// affine + relu through prefix.0 .. prefix.{k}, the last producing E outputs.
template <typename T>
Var<T> mlp(const Net<T>& net, const std::string& prefix, std::size_t layers, Var<T> h) {
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = prefix + "." + std::to_string(i);
    h = relu(affine(net(name + ".W"), h, net(name + ".b")));
  }
  return h;
}

template <typename T>
Var<T> gru_step(const Net<T>& net, const std::string& p, Var<T> x, Var<T> h) {
  const Var<T> u = sigmoid(add(affine(net(p + ".Wu"), x, net(p + ".bu")), matvec(net(p + ".Uu"), h)));
  const Var<T> r = sigmoid(add(affine(net(p + ".Wr"), x, net(p + ".br")), matvec(net(p + ".Ur"), h)));
  const Var<T> n = tanh(add(affine(net(p + ".Wn"), x, net(p + ".bn")), mul(r, affine(net(p + ".Un"), h, net(p + ".cn")))));
  return add(h, mul(u, sub(n, h)));
}

// Input-free GRU step used by the sequence decoder.
template <typename T>
Var<T> gru_step(const Net<T>& net, const std::string& p, Var<T> h) {
  const Var<T> u = sigmoid(affine(net(p + ".Uu"), h, net(p + ".bu")));
  const Var<T> r = sigmoid(affine(net(p + ".Ur"), h, net(p + ".br")));
  const Var<T> n = tanh(add(mul(r, affine(net(p + ".Un"), h, net(p + ".cn"))), net(p + ".bn")));
  return add(h, mul(u, sub(n, h)));
}

template <typename T>
Var<T> ones(Tape<T>& tape, std::size_t n) {
  return tape.constant(Tensor<T>(Shape{n}, T{1}));
}

}  // namespace

std::size_t den_input_size(const ArchConfig& arch) {
  return arch.latent_channels * latent_extent(arch, 1).q;
}

template <typename T>
void init_moe_params(ParamSet<T>& params, const ArchConfig& arch, std::uint64_t seed) {
  const std::size_t s = arch.speakers, e = arch.embed_dim;
  {
    Rng rng(seed, "init/een");
    const std::size_t kh = arch.een_kernel[0], kw = arch.een_kernel[1];
    std::size_t in = 1 + s;
    for (std::size_t i = 0; i < arch.een_channels.size(); ++i) {
      const std::string name = "een.conv." + std::to_string(i);
      const std::size_t out = arch.een_channels[i];
      params.add(name + ".W", init_uniform<T>(Shape{out, in, kh, kw}, in * kh * kw, rng));
      params.add(name + ".b", Tensor<T>(Shape{out}));
      in = out;
    }
    in *= een_pooled_height(arch);
    std::size_t i = 0;
    for (std::size_t out : arch.een_hidden) {
      add_dense(params, "een.fc." + std::to_string(i++), in, out, rng);
      in = out;
    }
    add_dense(params, "een.fc." + std::to_string(i), in, e, rng);
  }
  {
    Rng rng(seed, "init/den");
    const std::size_t in = den_input_size(arch), st = arch.den_state;
    for (const char* g : {"u", "r", "n"}) {
      params.add(std::string("den.gru.W") + g, init_uniform<T>(Shape{st, in}, st, rng));
      params.add(std::string("den.gru.U") + g, init_uniform<T>(Shape{st, st}, st, rng));
      params.add(std::string("den.gru.b") + g, Tensor<T>(Shape{st}));
    }
    params.add("den.gru.cn", Tensor<T>(Shape{st}));
    for (const char* g : {"u", "r", "n"}) {
      params.add(std::string("den.dec.U") + g, init_uniform<T>(Shape{st, st}, st, rng));
      params.add(std::string("den.dec.b") + g, Tensor<T>(Shape{st}));
    }
    params.add("den.dec.cn", Tensor<T>(Shape{st}));
    add_dense(params, "den.dec.out", st, in, rng);
    std::size_t width = st + s;
    std::size_t i = 0;
    for (std::size_t out : arch.den_hidden) {
      add_dense(params, "den.fc." + std::to_string(i++), width, out, rng);
      width = out;
    }
    add_dense(params, "den.fc." + std::to_string(i), width, e, rng);
  }
  {
    Rng rng(seed, "init/sgn");
    const double bound = 0.01 / std::sqrt(static_cast<double>(e));
    auto add_sgn = [&](const std::string& name, std::size_t c) {
      params.add(name + ".W", init_uniform_bound<T>(Shape{c, e}, bound, rng));
      params.add(name + ".b", Tensor<T>(Shape{c}, T{1}));
    };
    const auto enc = encoder_gate_sizes(arch), dec = decoder_gate_sizes(arch);
    for (std::size_t l = 0; l < enc.size(); ++l) add_sgn("sgn.enc." + std::to_string(l), enc[l]);
    for (std::size_t l = 0; l < dec.size(); ++l) add_sgn("sgn.dec." + std::to_string(l), dec[l]);
  }
}

template <typename T>
Var<T> een_embed(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& source) {
  const ConvGeometry g = conv_geometry(arch.een_kernel, arch.een_stride);
  Var<T> h = concat_code(x, source);
  for (std::size_t i = 0; i < arch.een_channels.size(); ++i) {
    const std::string name = "een.conv." + std::to_string(i);
    h = relu(add_channel_bias(conv2d(h, net(name + ".W"), g), net(name + ".b")));
  }
  return mlp(net, "een.fc", arch.een_hidden.size() + 1, mean_time(h));
}

template <typename T>
DenOutput<T> den_embed(const Net<T>& net, const ArchConfig& arch, Var<T> z, const SpeakerCode& target,
                       bool reconstruct) {
  Tape<T>& tape = z.tape();
  const std::size_t steps = z.shape()[2];
  if (z.shape()[0] * z.shape()[1] != den_input_size(arch)) {
    throw Error(ErrorCode::kShape, "den_embed: latent " + shape_str(z.shape()) + " does not match config");
  }
  Var<T> h = tape.constant(Tensor<T>(Shape{arch.den_state}));
  for (std::size_t t = 0; t < steps; ++t) h = gru_step(net, "den.gru", time_column(z, t), h);

  DenOutput<T> out;
  const Var<T> joined = concat(h, tape.constant(target.values<T>()));
  out.embed = mlp(net, "den.fc", arch.den_hidden.size() + 1, joined);
  if (reconstruct) {
    Var<T> s = h;
    Var<T> total;
    for (std::size_t t = 0; t < steps; ++t) {
      s = gru_step(net, "den.dec", s);
      const Var<T> err = mse(affine(net("den.dec.out.W"), s, net("den.dec.out.b")), time_column(z, t));
      total = total.valid() ? add(total, err) : err;
    }
    out.l_ae = scale(total, static_cast<T>(1.0 / static_cast<double>(steps)));
  }
  return out;
}

template <typename T>
Var<T> sgn_gates(const Net<T>& net, const std::string& prefix, Var<T> e) {
  return relu(affine(net(prefix + ".W"), e, net(prefix + ".b")));
}

template <typename T>
std::vector<Var<T>> encoder_gates(const Net<T>& net, const ArchConfig& arch, Var<T> x,
                                  const SpeakerCode& source) {
  const auto sizes = encoder_gate_sizes(arch);
  std::vector<Var<T>> gates;
  if (arch.gating == GatingMode::kIdentity) {
    for (std::size_t c : sizes) gates.push_back(ones(x.tape(), c));
    return gates;
  }
  const Var<T> e = een_embed(net, arch, x, source);
  for (std::size_t l = 0; l < sizes.size(); ++l) gates.push_back(sgn_gates(net, "sgn.enc." + std::to_string(l), e));
  return gates;
}

template <typename T>
DecoderGates<T> decoder_gates(const Net<T>& net, const ArchConfig& arch, Var<T> z,
                              const SpeakerCode& target, bool reconstruct) {
  const auto sizes = decoder_gate_sizes(arch);
  DecoderGates<T> out;
  if (arch.gating == GatingMode::kIdentity) {
    for (std::size_t c : sizes) out.gates.push_back(ones(z.tape(), c));
    return out;
  }
  const DenOutput<T> den = den_embed(net, arch, z, target, reconstruct);
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    out.gates.push_back(sgn_gates(net, "sgn.dec." + std::to_string(l), den.embed));
  }
  out.l_ae = den.l_ae;
  return out;
}

namespace {

template <typename T>
void force(std::vector<Var<T>>& gates, const std::vector<Tensor<T>>& values) {
  if (values.size() != gates.size()) throw Error(ErrorCode::kShape, "forced gate set has the wrong layer count");
  for (std::size_t l = 0; l < gates.size(); ++l) {
    if (values[l].shape() != gates[l].shape()) throw Error(ErrorCode::kShape, "forced gate vector has the wrong length");
    gates[l] = gates[l].tape().constant(values[l]);
  }
}

}  // namespace

template <typename T>
MoeForward<T> moe_forward(const Net<T>& net, const ArchConfig& arch, Var<T> x, const SpeakerCode& source,
                          const SpeakerCode& target, ForwardMode mode, const GateSet<T>* forced) {
  if (!arch.moe) throw Error(ErrorCode::kConfig, "model was built without gating networks");
  const SpeakerCode& code = mode == ForwardMode::kReconstruct ? source : target;
  MoeForward<T> f;
  f.enc_gates = encoder_gates(net, arch, x, source);
  if (forced) force(f.enc_gates, forced->enc);
  f.latent = encode(net, arch, x, static_cast<Rng*>(nullptr), std::span<const Var<T>>(f.enc_gates));
  DecoderGates<T> dg = decoder_gates(net, arch, f.latent.z, code, true);
  f.dec_gates = std::move(dg.gates);
  if (forced) force(f.dec_gates, forced->dec);
  f.l_ae = dg.l_ae;
  f.output = decode(net, arch, f.latent.z, code, x.shape()[2], std::span<const Var<T>>(f.dec_gates));
  return f;
}

template <typename T>
Var<T> l_spc(std::span<const Var<T>> gates) {
  if (gates.empty()) throw Error(ErrorCode::kShape, "l_spc of an empty gate set");
  Var<T> all = gates[0];
  for (std::size_t i = 1; i < gates.size(); ++i) all = concat(all, gates[i]);
  return l1_norm(all);
}

template <typename T>
GateSet<T> gate_values(const MoeForward<T>& f) {
  GateSet<T> g;
  for (const auto& v : f.enc_gates) g.enc.push_back(v.value());
  for (const auto& v : f.dec_gates) g.dec.push_back(v.value());
  return g;
}

template <typename T>
double zero_gate_fraction(const GateSet<T>& gates) {
  std::size_t zeros = 0, total = 0;
  for (const auto* group : {&gates.enc, &gates.dec}) {
    for (const Tensor<T>& g : *group) {
      for (std::size_t i = 0; i < g.size(); ++i) zeros += g[i] == T{0};
      total += g.size();
    }
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

#define MOEVC_INSTANTIATE(T)                                                                            \
  template void init_moe_params<T>(ParamSet<T>&, const ArchConfig&, std::uint64_t);                     \
  template Var<T> een_embed<T>(const Net<T>&, const ArchConfig&, Var<T>, const SpeakerCode&);           \
  template DenOutput<T> den_embed<T>(const Net<T>&, const ArchConfig&, Var<T>, const SpeakerCode&, bool); \
  template Var<T> sgn_gates<T>(const Net<T>&, const std::string&, Var<T>);                              \
  template std::vector<Var<T>> encoder_gates<T>(const Net<T>&, const ArchConfig&, Var<T>,               \
                                                const SpeakerCode&);                                    \
  template DecoderGates<T> decoder_gates<T>(const Net<T>&, const ArchConfig&, Var<T>,                   \
                                            const SpeakerCode&, bool);                                  \
  template MoeForward<T> moe_forward<T>(const Net<T>&, const ArchConfig&, Var<T>, const SpeakerCode&,   \
                                        const SpeakerCode&, ForwardMode, const GateSet<T>*);            \
  template Var<T> l_spc<T>(std::span<const Var<T>>);                                                    \
  template GateSet<T> gate_values<T>(const MoeForward<T>&);                                             \
  template double zero_gate_fraction<T>(const GateSet<T>&);

MOEVC_INSTANTIATE(float)
MOEVC_INSTANTIATE(double)

}  // namespace moevc
