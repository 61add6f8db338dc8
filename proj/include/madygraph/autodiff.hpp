// Copyright 2026 The MadyGraph Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or  implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// Reverse-mode differentiation on an explicit tape.
//
// Every op produces a Var. When at least one input requires a gradient and a
// Tape is active on the calling thread (see TapeScope), the op output is
// appended to that tape together with a closure that pushes the output
// gradient into its inputs. Without an active tape ops run in inference mode
// and build no graph.

#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>

#include "madygraph/tensor.hpp"

namespace mdg {

/// Global switch for finiteness checks on op inputs. On by default in debug
/// builds.
inline bool& debug_checks() {
#ifdef NDEBUG
  static bool on = false;
#else
  static bool on = true;
#endif
  return on;
}

template <std::floating_point T>
class Tape;

template <std::floating_point T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something is accumulated (leaves start at zero)
  bool requires_grad = false;
  const Tape<T>* tape = nullptr;
  std::string op = "leaf";
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<T>::zeros(value.shape());
    if (grad.shape() != value.shape()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }

  void accumulate(const Tensor<T>& g) {
    detail::require_shape(g.shape() == value.shape(), op + ": gradient shape " + to_string(g.shape()) +
                                                          " does not match value " + to_string(value.shape()));
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.numel(); ++i) buf[i] += g[i];
  }
};

/// Handle to a node in the computation graph. Cheap to copy.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : n_(std::make_shared<Node<T>>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
    if (requires_grad) n_->grad_buffer();
  }
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  bool defined() const noexcept { return static_cast<bool>(n_); }
  const Tensor<T>& value() const { return n_->value; }
  const Shape& shape() const { return n_->value.shape(); }
  std::size_t dim(std::size_t i) const { return n_->value.dim(i); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const Tensor<T>& grad() const { return n_->grad_buffer(); }
  Node<T>& node() const { return *n_; }
  const std::shared_ptr<Node<T>>& ptr() const { return n_; }
  T item() const { return n_->value.item(); }

 private:
  std::shared_ptr<Node<T>> n_;
};

/// Ordered record of executed primitives.
template <std::floating_point T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return active_; }

  void record(const std::shared_ptr<Node<T>>& n) {
    n->tape = this;
    ops_.push_back(n);
  }

  std::size_t size() const noexcept { return ops_.size(); }

  void clear() {
    for (auto& n : ops_) n->tape = nullptr;
    ops_.clear();
  }

  /// Populates gradients of every leaf reachable from `loss`. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward(const Var<T>& loss) {
    if (!loss.defined()) throw std::logic_error("backward: undefined loss");
    if (loss.value().ndim() != 0)
      throw ShapeError("backward: loss must be a scalar of shape [], got " + to_string(loss.shape()));
    if (loss.node().tape != this) throw std::logic_error("backward: loss was not recorded on this tape");
    std::size_t end = ops_.size();
    while (end > 0 && ops_[end - 1] != loss.ptr()) --end;
    for (std::size_t i = 0; i < end; ++i) ops_[i]->grad = Tensor<T>();
    loss.node().grad = Tensor<T>::scalar(T(1));
    for (std::size_t i = end; i-- > 0;) {
      Node<T>& n = *ops_[i];
      if (!n.grad.empty() && n.backward) n.backward(n);
    }
  }

  ~Tape() { clear(); }

 private:
  template <std::floating_point U>
  friend class TapeScope;
  inline static thread_local Tape* active_ = nullptr;
  std::vector<std::shared_ptr<Node<T>>> ops_;
};

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
template <std::floating_point T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Runs backward on the tape that recorded `loss`.
template <std::floating_point T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.node().tape == nullptr)
    throw std::logic_error("backward: loss was produced without an active tape");
  const_cast<Tape<T>*>(loss.node().tape)->backward(loss);
}

/// Learnable tensor: a persistent leaf whose gradient accumulates across
/// backward passes until zero_grad().
template <std::floating_point T>
class Parameter {
 public:
  Parameter() : Parameter(Tensor<T>::zeros({0})) {}
  explicit Parameter(Tensor<T> value) : leaf_(std::move(value), true) { leaf_.node().op = "parameter"; }
  Parameter(const Parameter& o) : Parameter(o.value()) { leaf_.node().grad = o.grad(); }
  Parameter& operator=(const Parameter& o) {
    if (this != &o) {
      leaf_ = Var<T>(o.value(), true);
      leaf_.node().op = "parameter";
      leaf_.node().grad = o.grad();
    }
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Var<T>& var() const { return leaf_; }
  Tensor<T>& value() { return leaf_.node().value; }
  const Tensor<T>& value() const { return leaf_.node().value; }
  Tensor<T>& grad() { return leaf_.node().grad_buffer(); }
  const Tensor<T>& grad() const { return leaf_.node().grad_buffer(); }
  const Shape& shape() const { return value().shape(); }
  void zero_grad() { grad().fill(T(0)); }

 private:
  Var<T> leaf_;
};

namespace detail {

template <std::floating_point T>
void check_finite(const std::string& op, std::initializer_list<const Var<T>*> inputs) {
  if (!debug_checks()) return;
  for (const Var<T>* v : inputs)
    if (v && v->defined() && !v->value().all_finite())
      throw std::domain_error(op + ": non-finite input");
}

/// Wraps an op result; attaches `fn` and records it when gradients are needed.
template <std::floating_point T, class Fn>
Var<T> make_result(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, std::string op, Fn&& fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = std::move(op);
  bool needs = false;
  for (const Var<T>* v : inputs) needs = needs || (v && v->requires_grad());
  Tape<T>* tape = Tape<T>::active();
  if (needs && tape) {
    n->requires_grad = true;
    n->backward = std::forward<Fn>(fn);
    tape->record(n);
  }
  return Var<T>(std::move(n));
}

template <std::floating_point T, class Fn>
Var<T> make_result_n(Tensor<T> value, const std::vector<Var<T>>& inputs, std::string op, Fn&& fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = std::move(op);
  bool needs = false;
  for (const auto& v : inputs) needs = needs || v.requires_grad();
  Tape<T>* tape = Tape<T>::active();
  if (needs && tape) {
    n->requires_grad = true;
    n->backward = std::forward<Fn>(fn);
    tape->record(n);
  }
  return Var<T>(std::move(n));
}

/// Gradient buffer of `v`, or nullptr when `v` does not take gradients.
template <std::floating_point T>
Tensor<T>* grad_sink(const Var<T>& v) {
  return v.requires_grad() ? &v.node().grad_buffer() : nullptr;
}

}  // namespace detail

}  // namespace mdg
