// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/kernels.hpp"

#include <numeric>
#include <string>

namespace moevc {
namespace {

void check_conv_operands(const Shape& xs, const Shape& ks, bool transpose) {
  if (xs.size() != 3) throw Error(ErrorCode::kShape, "conv input must be rank 3, got " + shape_str(xs));
  if (ks.size() != 4) throw Error(ErrorCode::kShape, "conv kernel must be rank 4, got " + shape_str(ks));
  const std::size_t kernel_in = transpose ? ks[0] : ks[1];
  if (kernel_in != xs[0]) {
    throw Error(ErrorCode::kShape, "kernel expects " + std::to_string(kernel_in) +
                                       " input channels, input has " + std::to_string(xs[0]));
  }
}

void check_geometry(const ConvGeometry& g, const Shape& ks) {
  if (g.kh != ks[2] || g.kw != ks[3]) {
    throw Error(ErrorCode::kShape, "geometry kernel size disagrees with kernel tensor " + shape_str(ks));
  }
  if (g.sh == 0 || g.sw == 0) throw Error(ErrorCode::kShape, "stride must be >= 1");
}

void check_channel_lists(std::span<const std::size_t> list, std::size_t limit, const char* what) {
  for (std::size_t c : list) {
    if (c >= limit) {
      throw Error(ErrorCode::kRange, std::string(what) + " channel " + std::to_string(c) +
                                         " out of range " + std::to_string(limit));
    }
  }
}

// Stride phases: column j of a row lands in plane j % s at column j / s, so
// a walk with step s over a row is a contiguous walk within one plane.
inline std::size_t phase_width(std::size_t w, std::size_t s) { return (w + s - 1) / s; }

// Zero-padded copy of the listed channels of x (others stay zero), laid out
// as [channel][phase][padded row][column / s].
template <typename T>
std::vector<T> pad_phased(const Tensor<T>& x, const ConvGeometry& g, std::span<const std::size_t> channels,
                          std::size_t hp, std::size_t wq) {
  const std::size_t h = x.dim(1), w = x.dim(2), s = g.sw;
  std::vector<T> out(x.dim(0) * s * hp * wq, T{0});
  for (std::size_t c : channels) {
    for (std::size_t i = 0; i < h; ++i) {
      const T* src = x.data() + (c * h + i) * w;
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t col = j + g.pw;
        out[((c * s + col % s) * hp + i + g.ph) * wq + col / s] = src[j];
      }
    }
  }
  return out;
}

// Reads the unpadded h x w window of a phased buffer back into plain rows.
template <typename T>
void unphase_crop(const T* phased, std::size_t s, std::size_t hp, std::size_t wq, std::size_t ph,
                  std::size_t pw, std::size_t h, std::size_t w, T* dst) {
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t col = j + pw;
      dst[i * w + j] = phased[((col % s) * hp + i + ph) * wq + col / s];
    }
  }
}

// Dot product with eight fixed partial sums (vectorises without reassociating
// differently from run to run).
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))) + tail;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (k > in + 2 * p) {
    throw Error(ErrorCode::kShape, "kernel extent " + std::to_string(k) + " exceeds padded input " +
                                       std::to_string(in + 2 * p));
  }
  return (in + 2 * p - k) / s + 1;
}

std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                      std::size_t op) {
  const std::size_t full = (in - 1) * s + k + op;
  if (full <= 2 * p) throw Error(ErrorCode::kShape, "transpose padding removes the whole output");
  if (op >= s) throw Error(ErrorCode::kShape, "output padding must be smaller than stride");
  return full - 2 * p;
}

std::vector<std::size_t> all_channels(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                         std::span<const std::size_t> in_channels,
                         std::span<const std::size_t> out_channels, MacCounter* counter) {
  check_conv_operands(x.shape(), kernel.shape(), false);
  check_geometry(g, kernel.shape());
  const std::size_t cin = x.dim(0), cout = kernel.dim(0);
  check_channel_lists(in_channels, cin, "input");
  check_channel_lists(out_channels, cout, "output");
  const std::size_t ho = conv_out_extent(x.dim(1), g.kh, g.sh, g.ph);
  const std::size_t wo = conv_out_extent(x.dim(2), g.kw, g.sw, g.pw);
  const std::size_t s = g.sw, hp = x.dim(1) + 2 * g.ph, wq = phase_width(x.dim(2) + 2 * g.pw, s);
  const std::vector<T> padded = pad_phased(x, g, in_channels, hp, wq);

  Tensor<T> out(Shape{cout, ho, wo});
  std::uint64_t macs = 0;
  for (std::size_t co : out_channels) {
    T* o = out.data() + co * ho * wo;
    for (std::size_t ci : in_channels) {
      const T* k = kernel.data() + (co * cin + ci) * g.kh * g.kw;
      for (std::size_t a = 0; a < g.kh; ++a) {
        for (std::size_t b = 0; b < g.kw; ++b) {
          const T wv = k[a * g.kw + b];
          const T* plane = padded.data() + (ci * s + b % s) * hp * wq + b / s;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const T* prow = plane + (oh * g.sh + a) * wq;
            T* orow = o + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) orow[ow] += wv * prow[ow];
          }
          macs += ho * wo;
        }
      }
    }
  }
  if (counter) counter->macs += macs;
  return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                         MacCounter* counter) {
  check_conv_operands(x.shape(), kernel.shape(), false);
  const auto in = all_channels(x.dim(0));
  const auto out = all_channels(kernel.dim(0));
  return conv2d_forward(x, kernel, g, std::span<const std::size_t>(in),
                        std::span<const std::size_t>(out), counter);
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_kernel) {
  const std::size_t cin = x.dim(0), cout = kernel.dim(0);
  const std::size_t ho = grad_out.dim(1), wo = grad_out.dim(2);
  const std::size_t s = g.sw, hp = x.dim(1) + 2 * g.ph, wq = phase_width(x.dim(2) + 2 * g.pw, s);
  const std::size_t plane_size = hp * wq;
  const auto channels = all_channels(cin);
  const std::vector<T> padded = pad_phased(x, g, channels, hp, wq);
  std::vector<T> grad_padded(grad_x ? cin * s * plane_size : 0, T{0});
  if (grad_kernel) *grad_kernel = Tensor<T>(kernel.shape());

  for (std::size_t co = 0; co < cout; ++co) {
    const T* go = grad_out.data() + co * ho * wo;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* k = kernel.data() + (co * cin + ci) * g.kh * g.kw;
      T* gk = grad_kernel ? grad_kernel->data() + (co * cin + ci) * g.kh * g.kw : nullptr;
      for (std::size_t a = 0; a < g.kh; ++a) {
        for (std::size_t b = 0; b < g.kw; ++b) {
          const std::size_t offset = (ci * s + b % s) * plane_size + b / s;
          if (grad_x) {
            const T wv = k[a * g.kw + b];
            T* gplane = grad_padded.data() + offset;
            for (std::size_t oh = 0; oh < ho; ++oh) {
              T* gprow = gplane + (oh * g.sh + a) * wq;
              const T* grow = go + oh * wo;
              for (std::size_t ow = 0; ow < wo; ++ow) gprow[ow] += wv * grow[ow];
            }
          }
          if (gk) {
            const T* plane = padded.data() + offset;
            T acc = 0;
            for (std::size_t oh = 0; oh < ho; ++oh) acc += dot(go + oh * wo, plane + (oh * g.sh + a) * wq, wo);
            gk[a * g.kw + b] += acc;
          }
        }
      }
    }
  }

  if (grad_x) {
    *grad_x = Tensor<T>(x.shape());
    const std::size_t h = x.dim(1), w = x.dim(2);
    for (std::size_t c = 0; c < cin; ++c) {
      unphase_crop(grad_padded.data() + c * s * plane_size, s, hp, wq, g.ph, g.pw, h, w,
                   grad_x->data() + c * h * w);
    }
  }
}

template <typename T>
Tensor<T> conv_transpose_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                                 const ConvGeometry& g, std::span<const std::size_t> in_channels,
                                 std::span<const std::size_t> out_channels, MacCounter* counter) {
  check_conv_operands(x.shape(), kernel.shape(), true);
  check_geometry(g, kernel.shape());
  const std::size_t cin = x.dim(0), cout = kernel.dim(1);
  check_channel_lists(in_channels, cin, "input");
  check_channel_lists(out_channels, cout, "output");
  const std::size_t h = x.dim(1), w = x.dim(2);
  const std::size_t ho = conv_transpose_out_extent(h, g.kh, g.sh, g.ph, g.oph);
  const std::size_t wo = conv_transpose_out_extent(w, g.kw, g.sw, g.pw, g.opw);
  const std::size_t s = g.sw;
  const std::size_t hf = (h - 1) * g.sh + g.kh + g.oph;
  const std::size_t wq = phase_width((w - 1) * g.sw + g.kw + g.opw, s);
  const std::size_t plane_size = hf * wq;

  // Scatter into the uncropped output, kept in phased layout.
  std::vector<T> full(cout * s * plane_size, T{0});
  std::uint64_t macs = 0;
  for (std::size_t co : out_channels) {
    for (std::size_t ci : in_channels) {
      const T* k = kernel.data() + (ci * cout + co) * g.kh * g.kw;
      const T* xin = x.data() + ci * h * w;
      for (std::size_t a = 0; a < g.kh; ++a) {
        for (std::size_t b = 0; b < g.kw; ++b) {
          const T wv = k[a * g.kw + b];
          T* plane = full.data() + (co * s + b % s) * plane_size + b / s;
          for (std::size_t ih = 0; ih < h; ++ih) {
            T* frow = plane + (ih * g.sh + a) * wq;
            const T* xrow = xin + ih * w;
            for (std::size_t iw = 0; iw < w; ++iw) frow[iw] += wv * xrow[iw];
          }
          macs += h * w;
        }
      }
    }
  }
  if (counter) counter->macs += macs;

  Tensor<T> out(Shape{cout, ho, wo});
  for (std::size_t co : out_channels) {
    unphase_crop(full.data() + co * s * plane_size, s, hf, wq, g.ph, g.pw, ho, wo, out.data() + co * ho * wo);
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                                 const ConvGeometry& g, MacCounter* counter) {
  check_conv_operands(x.shape(), kernel.shape(), true);
  const auto in = all_channels(x.dim(0));
  const auto out = all_channels(kernel.dim(1));
  return conv_transpose_forward(x, kernel, g, std::span<const std::size_t>(in),
                                std::span<const std::size_t>(out), counter);
}

template <typename T>
void conv_transpose_backward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvGeometry& g,
                             const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_kernel) {
  const std::size_t cin = x.dim(0), cout = kernel.dim(1);
  const std::size_t h = x.dim(1), w = x.dim(2);
  const std::size_t ho = grad_out.dim(1), wo = grad_out.dim(2);
  const std::size_t s = g.sw;
  const std::size_t hf = (h - 1) * g.sh + g.kh + g.oph;
  const std::size_t wq = phase_width((w - 1) * g.sw + g.kw + g.opw, s);
  const std::size_t plane_size = hf * wq;

  // Gradient of the crop: embed grad_out back into the uncropped, phased buffer.
  std::vector<T> grad_full(cout * s * plane_size, T{0});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t col = j + g.pw;
        grad_full[((co * s + col % s) * hf + i + g.ph) * wq + col / s] = grad_out[(co * ho + i) * wo + j];
      }
    }
  }
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_kernel) *grad_kernel = Tensor<T>(kernel.shape());

  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* xin = x.data() + ci * h * w;
    T* gx = grad_x ? grad_x->data() + ci * h * w : nullptr;
    for (std::size_t co = 0; co < cout; ++co) {
      const T* k = kernel.data() + (ci * cout + co) * g.kh * g.kw;
      T* gk = grad_kernel ? grad_kernel->data() + (ci * cout + co) * g.kh * g.kw : nullptr;
      for (std::size_t a = 0; a < g.kh; ++a) {
        for (std::size_t b = 0; b < g.kw; ++b) {
          const T* plane = grad_full.data() + (co * s + b % s) * plane_size + b / s;
          if (gx) {
            const T wv = k[a * g.kw + b];
            for (std::size_t ih = 0; ih < h; ++ih) {
              const T* grow = plane + (ih * g.sh + a) * wq;
              T* gxrow = gx + ih * w;
              for (std::size_t iw = 0; iw < w; ++iw) gxrow[iw] += wv * grow[iw];
            }
          }
          if (gk) {
            T acc = 0;
            for (std::size_t ih = 0; ih < h; ++ih) acc += dot(xin + ih * w, plane + (ih * g.sh + a) * wq, w);
            gk[a * g.kw + b] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
void affine_forward(const Tensor<T>& w, std::span<const T> x, const T* bias, std::span<T> out,
                    MacCounter* counter) {
  if (w.rank() != 2 || w.dim(1) != x.size() || w.dim(0) != out.size()) {
    throw Error(ErrorCode::kShape, "affine weight " + shape_str(w.shape()) + " vs input " +
                                       std::to_string(x.size()) + " / output " +
                                       std::to_string(out.size()));
  }
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* wr = w.data() + i * cols;
    T acc = 0;
    for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * x[j];
    out[i] = bias ? acc + bias[i] : acc;
  }
  if (counter) counter->macs += static_cast<std::uint64_t>(rows) * cols;
}

#define MOEVC_INSTANTIATE_KERNELS(T)                                                            \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,    \
                                    std::span<const std::size_t>, std::span<const std::size_t>, \
                                    MacCounter*);                                               \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,    \
                                    MacCounter*);                                               \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&,        \
                                const Tensor<T>&, Tensor<T>*, Tensor<T>*);                      \
  template Tensor<T> conv_transpose_forward(const Tensor<T>&, const Tensor<T>&,                 \
                                            const ConvGeometry&, std::span<const std::size_t>,  \
                                            std::span<const std::size_t>, MacCounter*);         \
  template Tensor<T> conv_transpose_forward(const Tensor<T>&, const Tensor<T>&,                 \
                                            const ConvGeometry&, MacCounter*);                  \
  template void conv_transpose_backward(const Tensor<T>&, const Tensor<T>&,                     \
                                        const ConvGeometry&, const Tensor<T>&, Tensor<T>*,      \
                                        Tensor<T>*);                                            \
  template void affine_forward(const Tensor<T>&, std::span<const T>, const T*, std::span<T>,    \
                               MacCounter*);

MOEVC_INSTANTIATE_KERNELS(float)
MOEVC_INSTANTIATE_KERNELS(double)

}  // namespace moevc
