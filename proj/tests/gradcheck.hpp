#pragma once

// Central finite-difference oracle shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "slu/params.hpp"
#include "slu/tape.hpp"

namespace slu::testing {

using nd::Tape;
using nd::Tensor;
using nd::Var;

using LossFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::vector<double> per_input;  // worst error per input tensor
};

/// Compares tape gradients of loss(inputs) with central differences, every
/// element of every input.
inline GradCheck gradcheck(const std::vector<Tensor<double>>& inputs, const LossFn& loss, double h = 1e-4) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    auto out = loss(tape, leaves);
    tape.backward(out);
    for (auto v : leaves) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& t : xs) leaves.push_back(tape.constant(t));
    return loss(tape, leaves).value()[0];
  };
  GradCheck result;
  auto work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = work[i][k];
      work[i][k] = orig + h;
      const double up = eval(work);
      work[i][k] = orig - h;
      const double down = eval(work);
      work[i][k] = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, rel_err(analytic[i][k], numeric));
    }
    result.per_input.push_back(worst);
    result.max_rel_error = std::max(result.max_rel_error, worst);
  }
  return result;
}

using ModelLossFn = std::function<Var<double>(Tape<double>&, const nn::BoundParams<double>&,
                                             const std::vector<Var<double>>&)>;

struct NamedGradCheck {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;  // parameters, then "input<k>"
};

/// Same oracle over every tensor of a parameter set plus free inputs.
inline NamedGradCheck param_gradcheck(nn::ParamSet<double>& params, const std::vector<Tensor<double>>& inputs,
                                      const ModelLossFn& loss, double h = 1e-4) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    nn::BoundParams<double> bp(tape, params);
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    tape.backward(loss(tape, bp, leaves));
    for (std::size_t i = 0; i < bp.size(); ++i) analytic.push_back(tape.grad(bp.at(i)));
    for (auto v : leaves) analytic.push_back(tape.grad(v));
  }
  auto work = inputs;
  auto eval = [&] {
    Tape<double> tape;
    nn::BoundParams<double> bp(tape, params, false);
    std::vector<Var<double>> xs;
    for (const auto& t : work) xs.push_back(tape.constant(t));
    return loss(tape, bp, xs).value()[0];
  };
  auto probe = [&](Tensor<double>& t, const Tensor<double>& g) {
    double worst = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double orig = t[k];
      t[k] = orig + h;
      const double up = eval();
      t[k] = orig - h;
      const double down = eval();
      t[k] = orig;
      worst = std::max(worst, rel_err(g[k], (up - down) / (2 * h)));
    }
    return worst;
  };
  NamedGradCheck result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    result.per_tensor.emplace_back(params[i].first, probe(params[i].second, analytic[i]));
  }
  for (std::size_t i = 0; i < work.size(); ++i) {
    result.per_tensor.emplace_back("input" + std::to_string(i), probe(work[i], analytic[params.size() + i]));
  }
  for (const auto& [name, err] : result.per_tensor) result.max_rel_error = std::max(result.max_rel_error, err);
  return result;
}

inline Tensor<double> random_tensor(nd::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

}  // namespace slu::testing
