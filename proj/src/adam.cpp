// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/adam.hpp"

#include <cmath>

namespace moevc {

template <typename T>
AdamState<T> make_adam_state(const ParamSet<T>& params, const AdamConfig& config) {
  if (!(config.b1 >= 0.0 && config.b1 < 1.0) || !(config.b2 >= 0.0 && config.b2 < 1.0)) {
    throw Error(ErrorCode::kConfig, "Adam betas must lie in [0, 1)");
  }
  if (!(config.lr > 0.0) || !(config.eps > 0.0)) throw Error(ErrorCode::kConfig, "Adam lr and eps must be positive");
  AdamState<T> state;
  state.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m.emplace_back(params[i].value.shape());
    state.v.emplace_back(params[i].value.shape());
  }
  return state;
}

template <typename T>
void adam_step(ParamSet<T>& params, const GradientSet<T>& grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw Error(ErrorCode::kShape, "adam_step: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const auto& c = state.config;
  const T b1 = static_cast<T>(c.b1), b2 = static_cast<T>(c.b2);
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  const T corr1 = static_cast<T>(1.0 - std::pow(c.b1, static_cast<double>(state.step)));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.b2, static_cast<double>(state.step)));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = params[k].value;
    const Tensor<T>& g = grads[k];
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    require_same_shape(p, g, "adam_step");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T m_hat = m[i] / corr1;
      const T v_hat = v[i] / corr2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template AdamState<float> make_adam_state(const ParamSet<float>&, const AdamConfig&);
template AdamState<double> make_adam_state(const ParamSet<double>&, const AdamConfig&);
template void adam_step(ParamSet<float>&, const GradientSet<float>&, AdamState<float>&);
template void adam_step(ParamSet<double>&, const GradientSet<double>&, AdamState<double>&);

}  // namespace moevc
