// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/acvae.hpp"

#include <string>

#include "moevc/error.hpp"

namespace moevc {

namespace {

std::size_t pooled_height(const ArchConfig& arch) {
  const ConvGeometry g = conv_geometry(arch.cls_kernel, arch.cls_stride);
  std::size_t q = arch.feature_dim;
  for (std::size_t i = 0; i < arch.cls_channels.size(); ++i) q = conv_out_extent(q, g.kh, g.sh, g.ph);
  return q;
}

}  // namespace

template <typename T>
void init_classifier_params(ParamSet<T>& params, const ArchConfig& arch, std::uint64_t seed) {
  Rng rng(seed, "init/cls");
  const std::size_t kh = arch.cls_kernel[0], kw = arch.cls_kernel[1];
  std::size_t in = 1;
  for (std::size_t i = 0; i < arch.cls_channels.size(); ++i) {
    const std::string name = "cls." + std::to_string(i);
    const std::size_t out = arch.cls_channels[i];
    params.add(name + ".W", init_uniform<T>(Shape{out, in, kh, kw}, in * kh * kw, rng));
    params.add(name + ".b", Tensor<T>(Shape{out}));
    in = out;
  }
  const std::size_t flat = in * pooled_height(arch);
  params.add("cls.fc.W", init_uniform<T>(Shape{arch.speakers, flat}, flat, rng));
  params.add("cls.fc.b", Tensor<T>(Shape{arch.speakers}));
}

template <typename T>
Var<T> classify(const Net<T>& net, const ArchConfig& arch, Var<T> x, bool frozen) {
  auto p = [&](const std::string& name) { return frozen ? net.frozen(name) : net(name); };
  const ConvGeometry g = conv_geometry(arch.cls_kernel, arch.cls_stride);
  Var<T> h = x;
  for (std::size_t i = 0; i < arch.cls_channels.size(); ++i) {
    const std::string name = "cls." + std::to_string(i);
    h = relu(add_channel_bias(conv2d(h, p(name + ".W"), g), p(name + ".b")));
  }
  return affine(p("cls.fc.W"), mean_time(h), p("cls.fc.b"));
}

template <typename T>
Var<T> mi_term(const Net<T>& net, const ArchConfig& arch, Var<T> decoded, std::size_t label) {
  return neg(softmax_cross_entropy(classify(net, arch, decoded, true), label));
}

template <typename T>
Var<T> ce_term(const Net<T>& net, const ArchConfig& arch, Var<T> x, std::size_t label) {
  return softmax_cross_entropy(classify(net, arch, detach(x)), label);
}

#define MOEVC_INSTANTIATE(T)                                                                   \
  template void init_classifier_params<T>(ParamSet<T>&, const ArchConfig&, std::uint64_t);     \
  template Var<T> classify<T>(const Net<T>&, const ArchConfig&, Var<T>, bool);                 \
  template Var<T> mi_term<T>(const Net<T>&, const ArchConfig&, Var<T>, std::size_t);           \
  template Var<T> ce_term<T>(const Net<T>&, const ArchConfig&, Var<T>, std::size_t);

MOEVC_INSTANTIATE(float)
MOEVC_INSTANTIATE(double)

}  // namespace moevc
