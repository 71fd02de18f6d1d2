#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slu/error.hpp"
#include "slu/tape.hpp"

namespace slu::nn {

using nd::Tensor;
using nd::Var;

/// Ordered, named collection of tensors. Iteration order is insertion order,
/// which is also checkpoint order.
template <typename T>
class ParamSet {
 public:
  using value_type = T;
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value) {
    if (index_.contains(name)) throw Error("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error("unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  Tensor<T>& at(std::string_view name) { return entries_[index_of(name)].second; }
  const Tensor<T>& at(std::string_view name) const { return entries_[index_of(name)].second; }

  std::size_t size() const { return entries_.size(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A ParamSet recorded as differentiable leaves on one tape.
template <typename T>
class BoundParams {
 public:
  /// With differentiable = false the tensors are recorded as constants, which
  /// skips all backward bookkeeping (inference).
  BoundParams(nd::Tape<T>& tape, const ParamSet<T>& params, bool differentiable = true) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& [name, value] : params) {
      vars_.push_back(differentiable ? tape.leaf(value) : tape.constant(value));
    }
  }

  Var<T> operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }
  Var<T> at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

 private:
  const ParamSet<T>* params_;
  std::vector<Var<T>> vars_;
};

template <typename T>
Tensor<T> uniform_tensor(nd::Shape shape, double limit, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

}  // namespace slu::nn
