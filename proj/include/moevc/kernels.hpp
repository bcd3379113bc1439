// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "moevc/tensor.hpp"

namespace moevc {

/// Spatial hyperparameters shared by conv2d and its transpose. Output padding
/// (oph/opw) only applies to the transpose and selects among the output sizes
/// that map back to the same input size under the forward convolution.
struct ConvGeometry {
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;
  std::size_t oph = 0, opw = 0;
};

/// Counts multiply-accumulates actually executed by the kernels below.
struct MacCounter {
  std::uint64_t macs = 0;
};

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p);
std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                      std::size_t op);

std::vector<std::size_t> all_channels(std::size_t n);

template <typename T>
inline T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// conv2d: x is C_in x H x W, kernel is C_out x C_in x kh x kw, cross-correlation.
// Only the listed input channels are read and only the listed output channels
// are written; everything else in the result is zero. For a fixed output
// element the accumulation order is (input channel, kernel row, kernel column)
// regardless of which channels are listed, so skipping channels that hold
// zeros reproduces the dense result.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                         std::span<const std::size_t> in_channels,
                         std::span<const std::size_t> out_channels, MacCounter* counter = nullptr);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                         MacCounter* counter = nullptr);

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_kernel);

// Transposed convolution: x is C_in x H x W, kernel is C_in x C_out x kh x kw
// (the adjoint of conv2d with that kernel). Computed by scattering every input
// element through the full kernel into an uncropped buffer, then cropping the
// padding, so the MAC count is C_in * C_out * kh * kw * H * W.
template <typename T>
Tensor<T> conv_transpose_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                                 const ConvGeometry& g, std::span<const std::size_t> in_channels,
                                 std::span<const std::size_t> out_channels,
                                 MacCounter* counter = nullptr);

template <typename T>
Tensor<T> conv_transpose_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                                 const ConvGeometry& g, MacCounter* counter = nullptr);

template <typename T>
void conv_transpose_backward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                             const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_kernel);

// out[i] = sum_j w[i, j] * x[j] (+ bias[i]); the bias is added after the sum.
template <typename T>
void affine_forward(const Tensor<T>& w, std::span<const T> x, const T* bias, std::span<T> out,
                    MacCounter* counter = nullptr);

}  // namespace moevc
