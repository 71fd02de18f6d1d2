#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "slu/gru.hpp"
#include "slu/ops.hpp"
#include "slu/params.hpp"

namespace slu::nn {

enum class Mode { train, infer };
enum class Pooling { max, last };

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);

struct EncoderConfig {
  std::size_t input_dim = 40;
  std::size_t n_layers = 4;
  std::size_t hidden = 256;  // per direction
  std::size_t stride = 2;

  void validate() const;
  /// Length after all layers: ceil(T/stride) applied n_layers times.
  std::size_t output_length(std::size_t frames) const;
};

struct DecoderConfig {
  std::size_t ff_hidden = 1024;
  std::size_t n_classes = 35;
  bool batch_norm = true;
  Pooling pooling = Pooling::max;

  void validate() const;
};

struct BatchNormConfig {
  double momentum = 0.9;
  double epsilon = 1e-5;
};

/// Running statistics of a batch-norm layer; gamma/beta live in the ParamSet.
template <typename T>
struct BatchNormState {
  BatchNormConfig cfg;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::size_t updates = 0;

  BatchNormState() = default;
  BatchNormState(std::size_t dim, BatchNormConfig c)
      : cfg(c), running_mean({dim}), running_var({dim}, T{1}) {}

  /// train: batch statistics (B ≥ 2), optionally folding them into the
  /// running averages; infer: running statistics.
  Var<T> forward(Var<T> x, Var<T> gamma, Var<T> beta, Mode mode, bool update_running) {
    const T eps = static_cast<T>(cfg.epsilon);
    if (mode == Mode::train) {
      auto out = nd::batch_norm_train(x, gamma, beta, eps);
      if (update_running) {
        const T m = static_cast<T>(cfg.momentum);
        for (std::size_t j = 0; j < running_mean.size(); ++j) {
          running_mean[j] = m * running_mean[j] + (T{1} - m) * out.mean[j];
          running_var[j] = m * running_var[j] + (T{1} - m) * out.var[j];
        }
        ++updates;
      }
      return out.y;
    }
    if (updates == 0) throw Error("batch_norm: inference before any running-statistics update");
    return nd::batch_norm_infer(x, gamma, beta, running_mean, running_var, eps);
  }
};

template <typename T>
struct EncoderOutput {
  Var<T> output;     // T_e × 2H
  Var<T> fwd_last;   // last layer, forward direction, final frame
  Var<T> bwd_first;  // last layer, backward direction, first frame
};

inline std::string encoder_prefix(std::size_t layer, bool forward) {
  return "enc.l" + std::to_string(layer) + (forward ? ".fwd" : ".bwd");
}

/// Stacked bidirectional layers with per-layer subsampling.
template <typename T>
EncoderOutput<T> encoder_forward(Var<T> features, const EncoderConfig& cfg, const BoundParams<T>& bp,
                                 const std::string& prefix = "enc") {
  if (features.value().cols() != cfg.input_dim) {
    throw DimensionError("encoder: feature dim " + std::to_string(features.value().cols()) +
                         " does not match configured " + std::to_string(cfg.input_dim));
  }
  Var<T> x = features;
  BidirOutput<T> layer;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    layer = bidir_layer_forward(x, direction_vars(bp, base + ".fwd"), direction_vars(bp, base + ".bwd"),
                                cfg.stride);
    x = layer.output;
  }
  return {x, layer.fwd_last, layer.bwd_first};
}

template <typename T>
Var<T> max_pool_time(Var<T> enc) {
  return nd::max_pool_rows(enc);
}

template <typename T>
Var<T> last_step_readout(Var<T> fwd_last, Var<T> bwd_first) {
  return nd::concat_cols(fwd_last, bwd_first);
}

/// pooled (B×D) → affine → [batch norm] → tanh → affine → logits (B×K).
template <typename T>
Var<T> decoder_logits(Var<T> pooled, const DecoderConfig& cfg, const BoundParams<T>& bp, BatchNormState<T>& bn,
                      Mode mode, bool update_running) {
  auto hidden = nd::add(nd::matmul_nt(pooled, bp["dec.fc1.W"]), bp["dec.fc1.b"]);
  if (cfg.batch_norm) hidden = bn.forward(hidden, bp["dec.bn.gamma"], bp["dec.bn.beta"], mode, update_running);
  hidden = nd::tanh(hidden);
  return nd::add(nd::matmul_nt(hidden, bp["dec.out.W"]), bp["dec.out.b"]);
}

/// Pyramidal bidirectional-GRU encoder with a pooled feed-forward decoder.
template <typename T>
class SpeechModel {
 public:
  using Item = Tensor<T>;  // T×F features

  SpeechModel() = default;
  SpeechModel(EncoderConfig enc, DecoderConfig dec, std::uint64_t seed, BatchNormConfig bn = {});

  const EncoderConfig& encoder_config() const { return enc_; }
  const DecoderConfig& decoder_config() const { return dec_; }
  std::size_t n_classes() const { return dec_.n_classes; }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  BatchNormState<T>& batch_norm_state() { return bn_; }
  const BatchNormState<T>& batch_norm_state() const { return bn_; }

  /// Pooled utterance vector (1×D) for one sequence.
  Var<T> pooled(Var<T> features, const BoundParams<T>& bp) const;

  /// Logits (B×K) for a batch of utterances, each processed to its own length.
  Var<T> logits(nd::Tape<T>& tape, const BoundParams<T>& bp, std::span<const Var<T>> utterances, Mode mode,
                bool update_running = true);
  Var<T> logits(nd::Tape<T>& tape, const BoundParams<T>& bp, std::span<const Item* const> items, Mode mode,
                bool update_running = true);

  /// Posterior for one utterance in inference mode.
  Tensor<T> posterior(const Item& features);

  /// Trainable scalar count (running statistics excluded).
  std::size_t count_params() const { return params_.scalar_count(); }

 private:
  EncoderConfig enc_;
  DecoderConfig dec_;
  ParamSet<T> params_;
  BatchNormState<T> bn_;
};

/// Adds the decoder tensors (fc1, optional bn, out).
template <typename T>
void add_decoder_params(ParamSet<T>& params, std::size_t input, const DecoderConfig& cfg, std::mt19937_64& rng);

extern template class SpeechModel<float>;
extern template class SpeechModel<double>;

}  // namespace slu::nn
