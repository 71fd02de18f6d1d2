#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slu/model.hpp"

namespace slu::saliency {

using nd::Tensor;

/// Class to explain; empty means the predicted class.
using Target = std::optional<std::size_t>;

/// Gradient of the target class logit with respect to every input cell, in
/// inference mode.
template <typename T>
Tensor<T> input_gradients(nn::SpeechModel<T>& model, const Tensor<T>& features, Target target = std::nullopt) {
  const std::size_t k = model.n_classes();
  if (target && *target >= k) {
    throw DimensionError("saliency: class " + std::to_string(*target) + " outside the model's " +
                         std::to_string(k) + " classes");
  }
  nd::Tape<T> tape;
  nn::BoundParams<T> bp(tape, model.params(), false);
  auto x = tape.leaf(features);
  const nd::Var<T> xs[] = {x};
  auto z = model.logits(tape, bp, std::span<const nd::Var<T>>(xs), nn::Mode::infer, false);
  std::size_t c = 0;
  if (target) {
    c = *target;
  } else {
    const auto& zv = z.value();
    for (std::size_t j = 1; j < k; ++j)
      if (zv[j] > zv[c]) c = j;
  }
  tape.backward(nd::sum(nd::slice_cols(z, c, c + 1)));
  return tape.grad(x);
}

struct SaliencyMap {
  Tensor<double> values;            // |gradient|, T×F
  std::size_t target_class = 0;
  std::vector<double> frame_scores;  // L2 norm of each row
  Tensor<double> normalized;        // values / max, or values when max is 0
};

SaliencyMap saliency_from_gradients(const Tensor<double>& gradients, std::size_t target_class);

template <typename T>
SaliencyMap make_saliency(nn::SpeechModel<T>& model, const Tensor<T>& features, Target target = std::nullopt) {
  std::size_t cls = 0;
  if (target) {
    cls = *target;
  } else {
    const auto post = model.posterior(features);
    for (std::size_t j = 1; j < post.size(); ++j)
      if (post[j] > post[cls]) cls = j;
  }
  return saliency_from_gradients(input_gradients(model, features, cls).template cast<double>(), cls);
}

/// Share of the total per-frame score falling in frames [begin, end).
double region_mass(const SaliencyMap& map, std::size_t begin, std::size_t end);

/// Grayscale P5 image of a T×F matrix: width T, height F, lowest mel bin on
/// the bottom row, linear min-max scaling (mid-gray when constant).
void write_pgm(const std::filesystem::path& path, const Tensor<double>& frames);

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> pixels;  // row-major, top row first
  unsigned char at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};
Image read_pgm(const std::filesystem::path& path);

/// <prefix>.features.pgm and <prefix>.saliency.pgm
void render_saliency(const std::filesystem::path& prefix, const SaliencyMap& map, const Tensor<double>& features);

/// One row per frame: F saliency values then the frame score.
void write_saliency_csv(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace slu::saliency
