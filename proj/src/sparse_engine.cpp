// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/sparse_engine.hpp"

#include <cstdio>
#include <sstream>

#include "moevc/error.hpp"
#include "moevc/kernels.hpp"

namespace moevc {

std::uint64_t FlopLedger::dense_macs() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.dense_macs;
  return s;
}

std::uint64_t FlopLedger::actual_macs() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.actual_macs;
  return s;
}

std::uint64_t FlopLedger::overhead_macs() const {
  std::uint64_t s = 0;
  for (const auto& o : overhead) s += o.macs;
  return s;
}

namespace {

// Gate vector bound to a base layer, or null for ungated layers.
template <typename T>
const Tensor<T>* gate_for(const BaseLayer& l, const GateSet<T>& gates, std::size_t& enc, std::size_t& dec) {
  if (!l.gated) return nullptr;
  const bool is_enc = !l.transpose;
  const auto& group = is_enc ? gates.enc : gates.dec;
  std::size_t& i = is_enc ? enc : dec;
  if (i >= group.size()) throw Error(ErrorCode::kShape, "gate set has no vector for " + l.name);
  const Tensor<T>* g = &group[i++];
  if (g->size() != l.out_channels) {
    throw Error(ErrorCode::kShape, l.name + ": " + std::to_string(g->size()) + " gates for " +
                                       std::to_string(l.out_channels) + " channels");
  }
  return g;
}

template <typename T>
LayerPlan layer_plan(const BaseLayer& l, const std::vector<std::size_t>& prev_active, const Tensor<T>* gate) {
  LayerPlan p;
  p.name = l.name;
  p.active_in = prev_active;
  for (std::size_t s = 0; s < l.code_channels; ++s) p.active_in.push_back(l.in_features + s);
  for (std::size_t c = 0; c < l.out_channels; ++c) {
    if (!gate || (*gate)[c] > T{0}) p.active_out.push_back(c);
  }
  return p;
}

template <typename T>
void check_gate_counts(const ArchConfig& arch, const GateSet<T>& gates) {
  if (!arch.moe) return;
  if (gates.enc.size() != encoder_gate_sizes(arch).size() || gates.dec.size() != decoder_gate_sizes(arch).size()) {
    throw Error(ErrorCode::kShape, "gate set layer count does not match the architecture");
  }
}

// Adds in channel order: feature channels first, then the code tile.
template <typename T>
Tensor<T> with_code(const Tensor<T>& h, const SpeakerCode& code) {
  const std::size_t plane = h.dim(1) * h.dim(2);
  Tensor<T> out(Shape{h.dim(0) + code.count, h.dim(1), h.dim(2)});
  std::copy(h.data(), h.data() + h.size(), out.data());
  const std::size_t c = h.dim(0) + code.index;
  std::fill(out.data() + c * plane, out.data() + (c + 1) * plane, T{1});
  return out;
}

template <typename T>
Tensor<T> run_layer(const ParamSet<T>& params, const BaseLayer& l, const Tensor<T>& input, const LayerPlan& plan,
                    const Tensor<T>* gate, MacCounter& counter) {
  auto conv = [&](const std::string& k) {
    const Tensor<T>& kernel = params.at(l.name + "." + k).value;
    return l.transpose ? conv_transpose_forward(input, kernel, l.geom, plan.active_in, plan.active_out, &counter)
                       : conv2d_forward(input, kernel, l.geom, plan.active_in, plan.active_out, &counter);
  };
  Tensor<T> y = conv("W");
  const Tensor<T>& b = params.at(l.name + ".b").value;
  const std::size_t plane = y.dim(1) * y.dim(2);
  if (!l.glu) {
    for (std::size_t co : plan.active_out)
      for (std::size_t i = 0; i < plane; ++i) y[co * plane + i] = y[co * plane + i] + b[co];
    return y;
  }
  const Tensor<T> v = conv("V");
  const Tensor<T>& d = params.at(l.name + ".d").value;
  for (std::size_t co : plan.active_out) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = co * plane + i;
      const T a = y[k] + b[co];
      const T s = sigmoid(v[k] + d[co]);
      T out = a * s;
      if (gate) out = out * (*gate)[co];
      y[k] = out;
    }
  }
  return y;
}

std::uint64_t conv_macs(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw, std::size_t ho,
                        std::size_t wo) {
  return static_cast<std::uint64_t>(cin) * cout * kh * kw * ho * wo;
}

}  // namespace

template <typename T>
GatePlan plan_gates(const ArchConfig& arch, const GateSet<T>& gates) {
  check_gate_counts(arch, gates);
  GatePlan plan;
  std::size_t enc = 0, dec = 0;
  std::vector<std::size_t> prev{0};
  for (const BaseLayer& l : base_layers(arch, 1)) {
    plan.layers.push_back(layer_plan(l, prev, gate_for(l, gates, enc, dec)));
    prev = plan.layers.back().active_out;
  }
  return plan;
}

std::uint64_t layer_macs(const BaseLayer& l, std::size_t active_in, std::size_t active_out) {
  const Spatial& s = l.transpose ? l.in : l.out;
  return (l.glu ? 2 : 1) * conv_macs(active_in, active_out, l.geom.kh, l.geom.kw, s.q, s.n);
}

FlopLedger count_flops_dense(const ArchConfig& arch, std::size_t frames) {
  FlopLedger ledger;
  for (const BaseLayer& l : base_layers(arch, frames)) {
    const std::uint64_t m = layer_macs(l, l.in_features + l.code_channels, l.out_channels);
    ledger.layers.push_back({l.name, m, m});
  }
  if (!arch.moe || arch.gating != GatingMode::kLearned) return ledger;

  const std::size_t e = arch.embed_dim;
  std::uint64_t een = 0;
  const ConvGeometry g = conv_geometry(arch.een_kernel, arch.een_stride);
  std::size_t c = 1 + arch.speakers, q = arch.feature_dim, n = frames;
  for (std::size_t out : arch.een_channels) {
    const std::size_t qo = conv_out_extent(q, g.kh, g.sh, g.ph), no = conv_out_extent(n, g.kw, g.sw, g.pw);
    een += conv_macs(c, out, g.kh, g.kw, qo, no);
    c = out;
    q = qo;
    n = no;
  }
  std::size_t width = c * q;
  for (std::size_t out : arch.een_hidden) {
    een += static_cast<std::uint64_t>(width) * out;
    width = out;
  }
  een += static_cast<std::uint64_t>(width) * e;

  std::uint64_t sgn_enc = 0, sgn_dec = 0;
  for (std::size_t ch : encoder_gate_sizes(arch)) sgn_enc += static_cast<std::uint64_t>(ch) * e;
  for (std::size_t ch : decoder_gate_sizes(arch)) sgn_dec += static_cast<std::uint64_t>(ch) * e;

  const std::uint64_t st = arch.den_state, in = den_input_size(arch);
  std::uint64_t den = latent_extent(arch, frames).n * 3 * (st * in + st * st);
  width = arch.den_state + arch.speakers;
  for (std::size_t out : arch.den_hidden) {
    den += static_cast<std::uint64_t>(width) * out;
    width = out;
  }
  den += static_cast<std::uint64_t>(width) * e;

  ledger.overhead = {{"een", een}, {"sgn.enc", sgn_enc}, {"den", den}, {"sgn.dec", sgn_dec}};
  return ledger;
}

FlopLedger count_flops_sparse(const GatePlan& plan, const ArchConfig& arch, std::size_t frames) {
  FlopLedger ledger = count_flops_dense(arch, frames);
  const auto layers = base_layers(arch, frames);
  if (plan.layers.size() != layers.size()) throw Error(ErrorCode::kShape, "plan does not match the architecture");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    ledger.layers[i].actual_macs =
        layer_macs(layers[i], plan.layers[i].active_in.size(), plan.layers[i].active_out.size());
  }
  return ledger;
}

template <typename T>
FrrReport frr(const FlopLedger& ledger, const GateSet<T>& gates, std::string utterance_id) {
  FrrReport r;
  r.utterance_id = std::move(utterance_id);
  const std::uint64_t dense = ledger.dense_macs();
  if (dense == 0) throw Error(ErrorCode::kShape, "dense baseline has no work");
  r.dense_flops = flops(dense);
  r.actual_flops = flops(ledger.actual_macs());
  r.overhead_flops = flops(ledger.overhead_macs());
  r.frr = 1.0 - static_cast<double>(ledger.actual_macs() + ledger.overhead_macs()) / static_cast<double>(dense);
  for (const auto& l : ledger.layers) {
    r.layer_reduction.push_back(1.0 - static_cast<double>(l.actual_macs) / static_cast<double>(l.dense_macs));
  }
  for (const auto* group : {&gates.enc, &gates.dec}) {
    for (const Tensor<T>& g : *group) {
      std::size_t zeros = 0;
      for (std::size_t i = 0; i < g.size(); ++i) zeros += g[i] == T{0};
      r.gate_sparsity.push_back(static_cast<double>(zeros) / static_cast<double>(g.size()));
    }
  }
  return r;
}

template <typename T>
SparseResult<T> sparse_forward(const ParamSet<T>& params, const ArchConfig& arch, const Tensor<T>& x,
                               const SpeakerCode& source, const SpeakerCode& target, const GateSet<T>* forced) {
  if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != arch.feature_dim) {
    throw Error(ErrorCode::kShape, "sparse_forward expects a 1 x " + std::to_string(arch.feature_dim) +
                                       " x N input, got " + shape_str(x.shape()));
  }
  if (source.count != arch.speakers || target.count != arch.speakers) {
    throw Error(ErrorCode::kShape, "speaker code length mismatch");
  }
  SparseResult<T> res;
  const std::size_t frames = x.dim(2);
  const auto layers = base_layers(arch, frames);
  const bool learned = arch.moe && arch.gating == GatingMode::kLearned;

  Tape<T> tape;
  MacCounter counter;
  tape.set_mac_counter(&counter);
  const Net<T> net(tape, params, false);
  auto stage = [&](const char* name, auto&& fn) {
    const std::uint64_t before = counter.macs;
    fn();
    res.ledger.overhead.push_back({name, counter.macs - before});
  };
  auto ones = [](const std::vector<std::size_t>& sizes) {
    std::vector<Tensor<T>> out;
    for (std::size_t c : sizes) out.emplace_back(Shape{c}, T{1});
    return out;
  };

  if (learned) {
    Var<T> e;
    stage("een", [&] { e = een_embed(net, arch, tape.constant(x), source); });
    stage("sgn.enc", [&] {
      for (std::size_t l = 0; l < arch.enc_channels.size(); ++l) {
        res.gates.enc.push_back(sgn_gates(net, "sgn.enc." + std::to_string(l), e).value());
      }
    });
  } else if (arch.moe) {
    res.gates.enc = ones(encoder_gate_sizes(arch));
  }
  if (forced && arch.moe) res.gates.enc = forced->enc;

  std::size_t enc = 0, dec = 0;
  std::vector<std::size_t> prev{0};
  Tensor<T> h = x;
  auto run = [&](const BaseLayer& l) {
    const Tensor<T>* gate = gate_for(l, res.gates, enc, dec);
    LayerPlan plan = layer_plan(l, prev, gate);
    const Tensor<T> input = l.code_channels ? with_code(h, target) : h;
    const std::uint64_t before = counter.macs;
    h = run_layer(params, l, input, plan, gate, counter);
    res.ledger.layers.push_back(
        {l.name, layer_macs(l, l.in_features + l.code_channels, l.out_channels), counter.macs - before});
    prev = plan.active_out;
    res.plan.layers.push_back(std::move(plan));
  };

  std::size_t i = 0;
  for (; i < layers.size() && !layers[i].transpose; ++i) run(layers[i]);

  if (learned) {
    DenOutput<T> den;
    stage("den", [&] { den = den_embed(net, arch, tape.constant(h), target, false); });
    stage("sgn.dec", [&] {
      for (std::size_t l = 0; l < decoder_gate_sizes(arch).size(); ++l) {
        res.gates.dec.push_back(sgn_gates(net, "sgn.dec." + std::to_string(l), den.embed).value());
      }
    });
  } else if (arch.moe) {
    res.gates.dec = ones(decoder_gate_sizes(arch));
  }
  if (forced && arch.moe) {
    res.gates.dec = forced->dec;
    check_gate_counts(arch, res.gates);
  }

  for (; i < layers.size(); ++i) run(layers[i]);
  res.output = std::move(h);
  res.report = frr(res.ledger, res.gates);
  return res;
}

std::string frr_csv_header() {
  return "utterance_id,frr,dense_flops,actual_flops,overhead_flops,layer_sparsity";
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string frr_csv_row(const FrrReport& r) {
  std::string sparsity;
  for (double s : r.gate_sparsity) sparsity += (sparsity.empty() ? "" : ";") + fmt(s);
  return r.utterance_id + "," + fmt(r.frr) + "," + std::to_string(r.dense_flops) + "," +
         std::to_string(r.actual_flops) + "," + std::to_string(r.overhead_flops) + "," + sparsity;
}

FrrReport parse_frr_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream in(line);
  std::string item;
  while (std::getline(in, item, ',')) f.push_back(item);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 6) throw Error(ErrorCode::kData, "FRR row needs 6 fields, got " + std::to_string(f.size()));
  FrrReport r;
  try {
    r.utterance_id = f[0];
    r.frr = std::stod(f[1]);
    r.dense_flops = std::stoull(f[2]);
    r.actual_flops = std::stoull(f[3]);
    r.overhead_flops = std::stoull(f[4]);
    std::stringstream s(f[5]);
    while (std::getline(s, item, ';')) r.gate_sparsity.push_back(std::stod(item));
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kData, "malformed FRR row: " + line);
  }
  return r;
}

#define MOEVC_INSTANTIATE(T)                                                                            \
  template GatePlan plan_gates<T>(const ArchConfig&, const GateSet<T>&);                                \
  template FrrReport frr<T>(const FlopLedger&, const GateSet<T>&, std::string);                         \
  template SparseResult<T> sparse_forward<T>(const ParamSet<T>&, const ArchConfig&, const Tensor<T>&,   \
                                             const SpeakerCode&, const SpeakerCode&, const GateSet<T>*);

MOEVC_INSTANTIATE(float)
MOEVC_INSTANTIATE(double)

}  // namespace moevc
