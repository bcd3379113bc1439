// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Auxiliary speaker classifier: conv + relu stack, mean over time, affine head.

#pragma once

#include <cstddef>
#include <cstdint>

#include "moevc/autodiff.hpp"
#include "moevc/config.hpp"
#include "moevc/net.hpp"

namespace moevc {

template <typename T>
void init_classifier_params(ParamSet<T>& params, const ArchConfig& arch, std::uint64_t seed);

/// S logits for a 1 x D x N feature map. Frozen classifiers pass no gradient
/// to their own parameters but still propagate into x.
template <typename T>
Var<T> classify(const Net<T>& net, const ArchConfig& arch, Var<T> x, bool frozen = false);

/// Log-probability the frozen classifier assigns to label for decoded output.
template <typename T>
Var<T> mi_term(const Net<T>& net, const ArchConfig& arch, Var<T> decoded, std::size_t label);

/// Cross-entropy of the classifier on real features; x is treated as data.
template <typename T>
Var<T> ce_term(const Net<T>& net, const ArchConfig& arch, Var<T> x, std::size_t label);

}  // namespace moevc
