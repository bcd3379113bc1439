// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over a fixed operation vocabulary. A Tape
// records one forward evaluation; Var is a handle to a recorded node.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "moevc/kernels.hpp"
#include "moevc/rng.hpp"
#include "moevc/tensor.hpp"

namespace moevc {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::size_t index = 0;  // position in the owning ParamSet
};

/// Named parameters in insertion order. Addresses are stable.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> value);
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;
  std::size_t size() const noexcept { return items_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// One gradient tensor per parameter, aligned with a ParamSet.
template <typename T>
class GradientSet {
 public:
  GradientSet() = default;
  explicit GradientSet(const ParamSet<T>& params);

  Tensor<T>& operator[](std::size_t i) { return grads_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const noexcept { return grads_.size(); }
  void zero();
  void scale(T factor);

 private:
  std::vector<Tensor<T>> grads_;
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Differentiable leaf that is not a parameter (gradient checks on inputs).
  Var<T> input(Tensor<T> value);
  /// Leaf bound to a parameter by reference. Untrainable bindings act as constants.
  Var<T> param(const Parameter<T>& p, bool trainable = true);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward,
                const char* op);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. node id; zeros if unreached.
  Tensor<T> grad(Var<T> v) const;
  const Tensor<T>& grad_ref(std::size_t id) const { return nodes_[id].grad; }
  /// Mutable gradient accumulator for node id, zero-filled on first use.
  Tensor<T>& grad_slot(std::size_t id);

  void backward(Var<T> loss);

  /// Adds every trainable parameter leaf's gradient into out, in node order.
  void accumulate_param_grads(GradientSet<T>& out) const;

  /// When set, convolution and affine ops add their executed MACs here.
  void set_mac_counter(MacCounter* counter) noexcept { counter_ = counter; }
  MacCounter* mac_counter() const noexcept { return counter_; }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Parameter<T>* param = nullptr;
    const char* op = "";
  };

  std::deque<Node> nodes_;
  MacCounter* counter_ = nullptr;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

// ---- operation vocabulary --------------------------------------------------
// Binary elementwise ops take equal shapes, or one operand of size 1 which is
// broadcast.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> add_scalar(Var<T> a, T value);
template <typename T> Var<T> neg(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// Mean absolute value.
template <typename T> Var<T> l1_norm(Var<T> a);
/// Mean squared difference.
template <typename T> Var<T> mse(Var<T> a, Var<T> b);

template <typename T> Var<T> conv2d(Var<T> x, Var<T> kernel, const ConvGeometry& g);
template <typename T> Var<T> conv2d_transpose(Var<T> x, Var<T> kernel, const ConvGeometry& g);

/// x: C x Q x N, bias: C.
template <typename T> Var<T> add_channel_bias(Var<T> x, Var<T> bias);
/// x: C x Q x N, gates: C. Channel i is multiplied by gates[i].
template <typename T> Var<T> scale_channels(Var<T> x, Var<T> gates);
template <typename T> Var<T> concat_channels(Var<T> a, Var<T> b);
template <typename T> Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);
/// C x Q x N -> C x Q, averaged over the last (time) axis.
template <typename T> Var<T> mean_time(Var<T> x);
/// C x Q x N -> C*Q vector holding frame t.
template <typename T> Var<T> time_column(Var<T> x, std::size_t t);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// Concatenation of two tensors viewed as flat vectors.
template <typename T> Var<T> concat(Var<T> a, Var<T> b);

/// w: out x in, x: in (any shape with that many elements), bias: out.
template <typename T> Var<T> affine(Var<T> w, Var<T> x, Var<T> bias);
template <typename T> Var<T> matvec(Var<T> w, Var<T> x);

template <typename T> Var<T> softmax_cross_entropy(Var<T> logits, std::size_t label);
/// 1/2 sum(mu^2 + exp(logvar) - 1 - logvar).
template <typename T> Var<T> kl_std_normal(Var<T> mu, Var<T> logvar);
/// mu + exp(logvar / 2) * eps with eps ~ N(0, 1) drawn from rng.
template <typename T> Var<T> sample_reparam(Var<T> mu, Var<T> logvar, Rng& rng);
template <typename T> Var<T> detach(Var<T> x);

}  // namespace moevc
