// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "moevc/autodiff.hpp"

namespace moevc {

struct AdamConfig {
  double lr = 0.001;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
AdamState<T> make_adam_state(const ParamSet<T>& params, const AdamConfig& config);

/// Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_step(ParamSet<T>& params, const GradientSet<T>& grads, AdamState<T>& state);

}  // namespace moevc
