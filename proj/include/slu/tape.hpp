#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "slu/tensor.hpp"

namespace slu::nd {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Define-by-run reverse-mode tape. Values are recorded in topological order;
/// backward() replays the recorded rules in exact reverse order. A tape is
/// owned by one caller at a time; independent tapes share nothing.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Differentiable input (parameter or feature). Receives d(seed)/d(leaf).
  Var<T> leaf(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// Records a primitive result. The backward rule is kept only when at least
  /// one parent needs a gradient.
  Var<T> record(Tensor<T> value, std::span<const Var<T>> parents, BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id].value;
  }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Upstream gradient of a node during backward.
  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient accumulator of a parent; zero-initialised on first touch.
  Tensor<T>& accumulator(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var<T> seed) {
    if (seed.tape != this) throw Error("backward: seed is not recorded on this tape");
    if (seed.id >= nodes_.size()) throw Error("backward: seed is not recorded on this tape");
    if (nodes_[seed.id].value.size() != 1) {
      throw DimensionError("backward: seed must be a scalar, got shape " +
                           shape_str(nodes_[seed.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[seed.id].grad = Tensor<T>(nodes_[seed.id].value.shape(), T{1});
    for (std::size_t i = seed.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// d(seed)/d(v) after backward(); exact zeros for values off every path.
  Tensor<T> grad(Var<T> v) const {
    check_owned(v);
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_owned(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw Error("value does not belong to this tape");
    }
  }

  std::deque<Node> nodes_;  // stable references across record()
};

}  // namespace slu::nd
