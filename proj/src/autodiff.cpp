// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/autodiff.hpp"

#include <cmath>
#include <string>

namespace moevc {

// ---- ParamSet / GradientSet ------------------------------------------------

template <typename T>
ParamSet<T>::ParamSet(const ParamSet& other) {
  *this = other;
}

template <typename T>
ParamSet<T>& ParamSet<T>::operator=(const ParamSet& other) {
  if (this == &other) return *this;
  items_.clear();
  index_.clear();
  for (const auto& p : other.items_) add(p->name, p->value);
  return *this;
}

template <typename T>
Parameter<T>& ParamSet<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw Error(ErrorCode::kData, "duplicate parameter " + name);
  const std::size_t idx = items_.size();
  index_.emplace(name, idx);
  items_.push_back(std::make_unique<Parameter<T>>(Parameter<T>{std::move(name), std::move(value), idx}));
  return *items_.back();
}

template <typename T>
Parameter<T>& ParamSet<T>::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kData, "unknown parameter " + std::string(name));
  return *items_[it->second];
}

template <typename T>
const Parameter<T>& ParamSet<T>::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kData, "unknown parameter " + std::string(name));
  return *items_[it->second];
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p->value.size();
  return n;
}

template <typename T>
GradientSet<T>::GradientSet(const ParamSet<T>& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads_.emplace_back(params[i].value.shape());
}

template <typename T>
void GradientSet<T>::zero() {
  for (auto& g : grads_) g.fill(T{0});
}

template <typename T>
void GradientSet<T>::scale(T factor) {
  for (auto& g : grads_)
    for (auto& v : g.values()) v *= factor;
}

// ---- Tape ------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  node.op = "input";
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(const Parameter<T>& p, bool trainable) {
  Node node;
  node.ref = &p.value;
  node.requires_grad = trainable;
  node.param = trainable ? &p : nullptr;
  node.op = "param";
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward,
                       const char* op) {
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (const Var<T>& in : inputs) {
    if (in.tape_ != this) throw Error(ErrorCode::kData, std::string(op) + ": operand from another tape");
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id()];
  if (!n.grad.empty()) return n.grad;
  return Tensor<T>(value(v.id()).shape());
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape_ != this) throw Error(ErrorCode::kData, "backward: loss from another tape");
  if (value(loss.id()).size() != 1) {
    throw Error(ErrorCode::kShape, "backward needs a scalar loss, got " + shape_str(value(loss.id()).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_slot(loss.id())[0] = T{1};
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template <typename T>
void Tape<T>::accumulate_param_grads(GradientSet<T>& out) const {
  for (const Node& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    Tensor<T>& dst = out[n.param->index];
    require_same_shape(dst, n.grad, "parameter gradient");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

// ---- helpers ---------------------------------------------------------------

namespace {

template <typename T>
void add_into(Tape<T>& tape, std::size_t id, const Tensor<T>& g) {
  if (!tape.requires_grad(id)) return;
  Tensor<T>& slot = tape.grad_slot(id);
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::kShape, std::string(what) + " expects rank " + std::to_string(rank) +
                                       ", got " + shape_str(t.shape()));
  }
}

enum class Broadcast { kNone, kLeft, kRight };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kRight;
  if (a.size() == 1) return Broadcast::kLeft;
  throw Error(ErrorCode::kShape, std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                     shape_str(b.shape()));
}

// Applies f elementwise with size-1 broadcasting; returns the result shape's tensor.
template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, Broadcast kind, F f) {
  const Tensor<T>& big = kind == Broadcast::kLeft ? b : a;
  Tensor<T> out(big.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T av = kind == Broadcast::kLeft ? a[0] : a[i];
    const T bv = kind == Broadcast::kRight ? b[0] : b[i];
    out[i] = f(av, bv);
  }
  return out;
}

// Reduces a full-size gradient onto an operand that may have been broadcast.
template <typename T>
void add_reduced(Tape<T>& tape, std::size_t id, const Tensor<T>& full, bool broadcast) {
  if (!tape.requires_grad(id)) return;
  if (!broadcast) {
    add_into(tape, id, full);
    return;
  }
  T acc = 0;
  for (T v : full.values()) acc += v;
  tape.grad_slot(id)[0] += acc;
}

template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, const char* op, F f, D derivative) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a},
                         [ia, derivative](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           const Tensor<T>& xv = tape.value(ia);
                           const Tensor<T>& yv = tape.value(self);
                           Tensor<T>& slot = tape.grad_slot(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * derivative(xv[i], yv[i]);
                         },
                         op);
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "add");
  Tensor<T> y = zip(a.value(), b.value(), kind, [](T x, T z) { return x + z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ia, ib, kind](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           add_reduced(tape, ia, g, kind == Broadcast::kLeft);
                           add_reduced(tape, ib, g, kind == Broadcast::kRight);
                         },
                         "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "sub");
  Tensor<T> y = zip(a.value(), b.value(), kind, [](T x, T z) { return x - z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ia, ib, kind](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           add_reduced(tape, ia, g, kind == Broadcast::kLeft);
                           Tensor<T> ng(g.shape());
                           for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
                           add_reduced(tape, ib, ng, kind == Broadcast::kRight);
                         },
                         "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "mul");
  Tensor<T> y = zip(a.value(), b.value(), kind, [](T x, T z) { return x * z; });
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ia, ib, kind](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           const Tensor<T>& av = tape.value(ia);
                           const Tensor<T>& bv = tape.value(ib);
                           if (tape.requires_grad(ia)) {
                             Tensor<T> ga = zip(g, bv, kind == Broadcast::kRight ? Broadcast::kRight : Broadcast::kNone,
                                                [](T x, T z) { return x * z; });
                             add_reduced(tape, ia, ga, kind == Broadcast::kLeft);
                           }
                           if (tape.requires_grad(ib)) {
                             Tensor<T> gb = zip(g, av, kind == Broadcast::kLeft ? Broadcast::kRight : Broadcast::kNone,
                                                [](T x, T z) { return x * z; });
                             add_reduced(tape, ib, gb, kind == Broadcast::kRight);
                           }
                         },
                         "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return unary(a, "scale", [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T value) {
  return unary(a, "add_scalar", [value](T x) { return x + value; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return unary(a, "neg", [](T x) { return -x; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(a, "sigmoid", [](T x) { return moevc::sigmoid(x); },
               [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(a, "relu", [](T x) { return x > T{0} ? x : T{0}; },
               [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(acc), {a},
                         [ia](Tape<T>& tape, std::size_t self) {
                           const T g = tape.grad_ref(self)[0];
                           for (T& v : tape.grad_slot(ia).values()) v += g;
                         },
                         "sum");
}

template <typename T>
Var<T> mean(Var<T> a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  const T n = static_cast<T>(a.value().size());
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(acc / n), {a},
                         [ia, n](Tape<T>& tape, std::size_t self) {
                           const T g = tape.grad_ref(self)[0] / n;
                           for (T& v : tape.grad_slot(ia).values()) v += g;
                         },
                         "mean");
}

template <typename T>
Var<T> l1_norm(Var<T> a) {
  T acc = 0;
  for (T v : a.value().values()) acc += std::abs(v);
  const T n = static_cast<T>(a.value().size());
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(acc / n), {a},
                         [ia, n](Tape<T>& tape, std::size_t self) {
                           const T g = tape.grad_ref(self)[0] / n;
                           const Tensor<T>& x = tape.value(ia);
                           Tensor<T>& slot = tape.grad_slot(ia);
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             const T s = x[i] > T{0} ? T{1} : (x[i] < T{0} ? T{-1} : T{0});
                             slot[i] += g * s;
                           }
                         },
                         "l1_norm");
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mse");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  T acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  const T n = static_cast<T>(av.size());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>::scalar(acc / n), {a, b},
                         [ia, ib, n](Tape<T>& tape, std::size_t self) {
                           const T g = tape.grad_ref(self)[0] * T{2} / n;
                           const Tensor<T>& x = tape.value(ia);
                           const Tensor<T>& y = tape.value(ib);
                           if (tape.requires_grad(ia)) {
                             Tensor<T>& s = tape.grad_slot(ia);
                             for (std::size_t i = 0; i < x.size(); ++i) s[i] += g * (x[i] - y[i]);
                           }
                           if (tape.requires_grad(ib)) {
                             Tensor<T>& s = tape.grad_slot(ib);
                             for (std::size_t i = 0; i < x.size(); ++i) s[i] -= g * (x[i] - y[i]);
                           }
                         },
                         "mse");
}

// ---- convolution -----------------------------------------------------------

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, const ConvGeometry& g) {
  Tensor<T> y = conv2d_forward(x.value(), kernel.value(), g, x.tape().mac_counter());
  const std::size_t ix = x.id(), ik = kernel.id();
  return x.tape().record(std::move(y), {x, kernel},
                         [ix, ik, g](Tape<T>& tape, std::size_t self) {
                           Tensor<T> gx, gk;
                           const bool wx = tape.requires_grad(ix), wk = tape.requires_grad(ik);
                           conv2d_backward(tape.value(ix), tape.value(ik), g, tape.grad_ref(self),
                                           wx ? &gx : nullptr, wk ? &gk : nullptr);
                           if (wx) add_into(tape, ix, gx);
                           if (wk) add_into(tape, ik, gk);
                         },
                         "conv2d");
}

template <typename T>
Var<T> conv2d_transpose(Var<T> x, Var<T> kernel, const ConvGeometry& g) {
  Tensor<T> y = conv_transpose_forward(x.value(), kernel.value(), g, x.tape().mac_counter());
  const std::size_t ix = x.id(), ik = kernel.id();
  return x.tape().record(std::move(y), {x, kernel},
                         [ix, ik, g](Tape<T>& tape, std::size_t self) {
                           Tensor<T> gx, gk;
                           const bool wx = tape.requires_grad(ix), wk = tape.requires_grad(ik);
                           conv_transpose_backward(tape.value(ix), tape.value(ik), g, tape.grad_ref(self),
                                                   wx ? &gx : nullptr, wk ? &gk : nullptr);
                           if (wx) add_into(tape, ix, gx);
                           if (wk) add_into(tape, ik, gk);
                         },
                         "conv2d_transpose");
}

// ---- channel / layout ops --------------------------------------------------

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  require_rank(xv, 3, "add_channel_bias");
  if (bv.size() != xv.dim(0)) throw Error(ErrorCode::kShape, "add_channel_bias: bias length mismatch");
  const std::size_t plane = xv.dim(1) * xv.dim(2);
  Tensor<T> y(xv.shape());
  for (std::size_t c = 0; c < xv.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] = xv[c * plane + i] + bv[c];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(y), {x, bias},
                         [ix, ib, plane](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           add_into(tape, ix, g);
                           if (tape.requires_grad(ib)) {
                             Tensor<T>& s = tape.grad_slot(ib);
                             for (std::size_t c = 0; c < s.size(); ++c) {
                               T acc = 0;
                               for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
                               s[c] += acc;
                             }
                           }
                         },
                         "add_channel_bias");
}

template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> gates) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gates.value();
  require_rank(xv, 3, "scale_channels");
  if (gv.size() != xv.dim(0)) {
    throw Error(ErrorCode::kShape, "scale_channels: " + std::to_string(gv.size()) + " gates for " +
                                       std::to_string(xv.dim(0)) + " channels");
  }
  const std::size_t plane = xv.dim(1) * xv.dim(2);
  Tensor<T> y(xv.shape());
  for (std::size_t c = 0; c < xv.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] = xv[c * plane + i] * gv[c];
  const std::size_t ix = x.id(), ig = gates.id();
  return x.tape().record(std::move(y), {x, gates},
                         [ix, ig, plane](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           const Tensor<T>& xv2 = tape.value(ix);
                           const Tensor<T>& gv2 = tape.value(ig);
                           if (tape.requires_grad(ix)) {
                             Tensor<T>& s = tape.grad_slot(ix);
                             for (std::size_t c = 0; c < gv2.size(); ++c)
                               for (std::size_t i = 0; i < plane; ++i) s[c * plane + i] += g[c * plane + i] * gv2[c];
                           }
                           if (tape.requires_grad(ig)) {
                             Tensor<T>& s = tape.grad_slot(ig);
                             for (std::size_t c = 0; c < gv2.size(); ++c) {
                               T acc = 0;
                               for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i] * xv2[c * plane + i];
                               s[c] += acc;
                             }
                           }
                         },
                         "scale_channels");
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 3, "concat_channels");
  require_rank(bv, 3, "concat_channels");
  if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2)) {
    throw Error(ErrorCode::kShape, "concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> y(Shape{av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.data(), av.data() + av.size(), y.data());
  std::copy(bv.data(), bv.data() + bv.size(), y.data() + av.size());
  const std::size_t ia = a.id(), ib = b.id(), na = av.size();
  return a.tape().record(std::move(y), {a, b},
                         [ia, ib, na](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           if (tape.requires_grad(ia)) {
                             Tensor<T>& s = tape.grad_slot(ia);
                             for (std::size_t i = 0; i < na; ++i) s[i] += g[i];
                           }
                           if (tape.requires_grad(ib)) {
                             Tensor<T>& s = tape.grad_slot(ib);
                             for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[na + i];
                           }
                         },
                         "concat_channels");
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "slice_channels");
  if (count == 0 || begin + count > xv.dim(0)) throw Error(ErrorCode::kRange, "slice_channels out of range");
  const std::size_t plane = xv.dim(1) * xv.dim(2);
  Tensor<T> y(Shape{count, xv.dim(1), xv.dim(2)});
  std::copy(xv.data() + begin * plane, xv.data() + (begin + count) * plane, y.data());
  const std::size_t ix = x.id(), offset = begin * plane;
  return x.tape().record(std::move(y), {x},
                         [ix, offset](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           Tensor<T>& s = tape.grad_slot(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) s[offset + i] += g[i];
                         },
                         "slice_channels");
}

template <typename T>
Var<T> mean_time(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "mean_time");
  const std::size_t rows = xv.dim(0) * xv.dim(1), n = xv.dim(2);
  Tensor<T> y(Shape{xv.dim(0), xv.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t t = 0; t < n; ++t) acc += xv[r * n + t];
    y[r] = acc / static_cast<T>(n);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(y), {x},
                         [ix, rows, n](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           Tensor<T>& s = tape.grad_slot(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const T v = g[r] / static_cast<T>(n);
                             for (std::size_t t = 0; t < n; ++t) s[r * n + t] += v;
                           }
                         },
                         "mean_time");
}

template <typename T>
Var<T> time_column(Var<T> x, std::size_t t) {
  const Tensor<T>& xv = x.value();
  require_rank(xv, 3, "time_column");
  if (t >= xv.dim(2)) throw Error(ErrorCode::kRange, "time_column index out of range");
  const std::size_t rows = xv.dim(0) * xv.dim(1), n = xv.dim(2);
  Tensor<T> y(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) y[r] = xv[r * n + t];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(y), {x},
                         [ix, rows, n, t](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           Tensor<T>& s = tape.grad_slot(ix);
                           for (std::size_t r = 0; r < rows; ++r) s[r * n + t] += g[r];
                         },
                         "time_column");
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(y), {x},
                         [ix](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           Tensor<T>& s = tape.grad_slot(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
                         },
                         "reshape");
}

template <typename T>
Var<T> concat(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> y(Shape{av.size() + bv.size()});
  std::copy(av.data(), av.data() + av.size(), y.data());
  std::copy(bv.data(), bv.data() + bv.size(), y.data() + av.size());
  const std::size_t ia = a.id(), ib = b.id(), na = av.size();
  return a.tape().record(std::move(y), {a, b},
                         [ia, ib, na](Tape<T>& tape, std::size_t self) {
                           const Tensor<T>& g = tape.grad_ref(self);
                           if (tape.requires_grad(ia)) {
                             Tensor<T>& s = tape.grad_slot(ia);
                             for (std::size_t i = 0; i < na; ++i) s[i] += g[i];
                           }
                           if (tape.requires_grad(ib)) {
                             Tensor<T>& s = tape.grad_slot(ib);
                             for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[na + i];
                           }
                         },
                         "concat");
}

// ---- dense layers ----------------------------------------------------------

namespace {

template <typename T>
Var<T> affine_impl(Var<T> w, Var<T> x, const Var<T>* bias, const char* op) {
  const Tensor<T>& wv = w.value();
  require_rank(wv, 2, op);
  if (bias && bias->value().size() != wv.dim(0)) throw Error(ErrorCode::kShape, std::string(op) + ": bias length mismatch");
  Tensor<T> y(Shape{wv.dim(0)});
  affine_forward(wv, x.value().values(), bias ? bias->value().data() : nullptr, y.values(),
                 w.tape().mac_counter());
  const std::size_t iw = w.id(), ix = x.id();
  const std::size_t ib = bias ? bias->id() : 0;
  const bool has_bias = bias != nullptr;
  auto backward = [iw, ix, ib, has_bias](Tape<T>& tape, std::size_t self) {
    const Tensor<T>& g = tape.grad_ref(self);
    const Tensor<T>& wv2 = tape.value(iw);
    const Tensor<T>& xv = tape.value(ix);
    const std::size_t rows = wv2.dim(0), cols = wv2.dim(1);
    if (tape.requires_grad(ix)) {
      Tensor<T>& s = tape.grad_slot(ix);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) s[j] += wv2[i * cols + j] * g[i];
    }
    if (tape.requires_grad(iw)) {
      Tensor<T>& s = tape.grad_slot(iw);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) s[i * cols + j] += g[i] * xv[j];
    }
    if (has_bias && tape.requires_grad(ib)) {
      Tensor<T>& s = tape.grad_slot(ib);
      for (std::size_t i = 0; i < rows; ++i) s[i] += g[i];
    }
  };
  if (bias) return w.tape().record(std::move(y), {w, x, *bias}, std::move(backward), op);
  return w.tape().record(std::move(y), {w, x}, std::move(backward), op);
}

}  // namespace

template <typename T>
Var<T> affine(Var<T> w, Var<T> x, Var<T> bias) {
  return affine_impl(w, x, &bias, "affine");
}

template <typename T>
Var<T> matvec(Var<T> w, Var<T> x) {
  return affine_impl<T>(w, x, nullptr, "matvec");
}

// ---- losses ----------------------------------------------------------------

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::size_t label) {
  const Tensor<T>& z = logits.value();
  if (label >= z.size()) {
    throw Error(ErrorCode::kRange, "label " + std::to_string(label) + " out of range for " +
                                       std::to_string(z.size()) + " classes");
  }
  T zmax = z[0];
  for (T v : z.values()) zmax = std::max(zmax, v);
  T denom = 0;
  for (T v : z.values()) denom += std::exp(v - zmax);
  const T log_denom = std::log(denom) + zmax;
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor<T>::scalar(log_denom - z[label]), {logits},
                              [il, label, log_denom](Tape<T>& tape, std::size_t self) {
                                const T g = tape.grad_ref(self)[0];
                                const Tensor<T>& zv = tape.value(il);
                                Tensor<T>& s = tape.grad_slot(il);
                                for (std::size_t i = 0; i < zv.size(); ++i) {
                                  const T p = std::exp(zv[i] - log_denom);
                                  s[i] += g * (p - (i == label ? T{1} : T{0}));
                                }
                              },
                              "softmax_cross_entropy");
}

template <typename T>
Var<T> kl_std_normal(Var<T> mu, Var<T> logvar) {
  require_same_shape(mu.value(), logvar.value(), "kl_std_normal");
  const Tensor<T>& m = mu.value();
  const Tensor<T>& lv = logvar.value();
  T acc = 0;
  for (std::size_t i = 0; i < m.size(); ++i) acc += m[i] * m[i] + std::exp(lv[i]) - T{1} - lv[i];
  const std::size_t im = mu.id(), il = logvar.id();
  return mu.tape().record(Tensor<T>::scalar(T{0.5} * acc), {mu, logvar},
                          [im, il](Tape<T>& tape, std::size_t self) {
                            const T g = tape.grad_ref(self)[0];
                            const Tensor<T>& m2 = tape.value(im);
                            const Tensor<T>& lv2 = tape.value(il);
                            if (tape.requires_grad(im)) {
                              Tensor<T>& s = tape.grad_slot(im);
                              for (std::size_t i = 0; i < m2.size(); ++i) s[i] += g * m2[i];
                            }
                            if (tape.requires_grad(il)) {
                              Tensor<T>& s = tape.grad_slot(il);
                              for (std::size_t i = 0; i < lv2.size(); ++i) s[i] += g * T{0.5} * (std::exp(lv2[i]) - T{1});
                            }
                          },
                          "kl_std_normal");
}

template <typename T>
Var<T> sample_reparam(Var<T> mu, Var<T> logvar, Rng& rng) {
  require_same_shape(mu.value(), logvar.value(), "sample_reparam");
  const Tensor<T>& m = mu.value();
  const Tensor<T>& lv = logvar.value();
  Tensor<T> eps(m.shape());
  for (T& e : eps.values()) e = static_cast<T>(rng.normal());
  Tensor<T> z(m.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = m[i] + std::exp(lv[i] * T{0.5}) * eps[i];
  const std::size_t im = mu.id(), il = logvar.id();
  return mu.tape().record(std::move(z), {mu, logvar},
                          [im, il, eps = std::move(eps)](Tape<T>& tape, std::size_t self) {
                            const Tensor<T>& g = tape.grad_ref(self);
                            add_into(tape, im, g);
                            if (tape.requires_grad(il)) {
                              const Tensor<T>& lv2 = tape.value(il);
                              Tensor<T>& s = tape.grad_slot(il);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                s[i] += g[i] * eps[i] * T{0.5} * std::exp(lv2[i] * T{0.5});
                            }
                          },
                          "sample_reparam");
}

template <typename T>
Var<T> detach(Var<T> x) {
  return x.tape().constant(x.value());
}

// ---- instantiation ---------------------------------------------------------

#define MOEVC_INSTANTIATE_AUTODIFF(T)                                          \
  template class ParamSet<T>;                                                  \
  template class GradientSet<T>;                                               \
  template class Tape<T>;                                                      \
  template Var<T> add(Var<T>, Var<T>);                                         \
  template Var<T> sub(Var<T>, Var<T>);                                         \
  template Var<T> mul(Var<T>, Var<T>);                                         \
  template Var<T> scale(Var<T>, T);                                            \
  template Var<T> add_scalar(Var<T>, T);                                       \
  template Var<T> neg(Var<T>);                                                 \
  template Var<T> sigmoid(Var<T>);                                             \
  template Var<T> relu(Var<T>);                                                \
  template Var<T> tanh(Var<T>);                                                \
  template Var<T> exp(Var<T>);                                                 \
  template Var<T> log(Var<T>);                                                 \
  template Var<T> sum(Var<T>);                                                 \
  template Var<T> mean(Var<T>);                                                \
  template Var<T> l1_norm(Var<T>);                                             \
  template Var<T> mse(Var<T>, Var<T>);                                         \
  template Var<T> conv2d(Var<T>, Var<T>, const ConvGeometry&);                 \
  template Var<T> conv2d_transpose(Var<T>, Var<T>, const ConvGeometry&);       \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                            \
  template Var<T> scale_channels(Var<T>, Var<T>);                              \
  template Var<T> concat_channels(Var<T>, Var<T>);                             \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);            \
  template Var<T> mean_time(Var<T>);                                           \
  template Var<T> time_column(Var<T>, std::size_t);                            \
  template Var<T> reshape(Var<T>, Shape);                                      \
  template Var<T> concat(Var<T>, Var<T>);                                      \
  template Var<T> affine(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> matvec(Var<T>, Var<T>);                                      \
  template Var<T> softmax_cross_entropy(Var<T>, std::size_t);                  \
  template Var<T> kl_std_normal(Var<T>, Var<T>);                               \
  template Var<T> sample_reparam(Var<T>, Var<T>, Rng&);                        \
  template Var<T> detach(Var<T>);

MOEVC_INSTANTIATE_AUTODIFF(float)
MOEVC_INSTANTIATE_AUTODIFF(double)

}  // namespace moevc
