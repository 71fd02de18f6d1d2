#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "slu/error.hpp"
#include "slu/model.hpp"
#include "slu/ops.hpp"
#include "slu/params.hpp"

namespace slu::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const ParamSet<T>& params) {
    for (const auto& [name, t] : params) {
      m.emplace_back(t.shape());
      v.emplace_back(t.shape());
    }
  }
};

/// One Adam update of every tensor. Tensors are updated independently of one
/// another; the step counter advances before the update.
template <typename T>
void adam_step(ParamSet<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("adam: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients and " + std::to_string(state.m.size()) +
                         " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (grads[i].shape() != p.shape() || state.m[i].shape() != p.shape()) {
      throw DimensionError("adam: gradient for '" + name + "' has shape " + nd::shape_str(grads[i].shape()) +
                           ", parameter has " + nd::shape_str(p.shape()));
    }
    for (T g : grads[i].values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto pv = params[i].second.values();
    auto gv = grads[i].values();
    auto mv = state.m[i].values();
    auto vv = state.v[i].values();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const double g = gv[k];
      const double m = cfg.beta1 * mv[k] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * g * g;
      mv[k] = static_cast<T>(m);
      vv[k] = static_cast<T>(v);
      pv[k] = static_cast<T>(pv[k] - cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon));
    }
  }
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  bool bucketing = false;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
  AdamConfig adam;

  void validate(bool batch_norm) const;
};

/// Labelled items plus the audio duration behind each (for RTF).
template <typename Item>
struct Dataset {
  std::vector<Item> items;
  std::vector<std::size_t> labels;
  std::vector<double> seconds;
  std::vector<std::string> ids;

  std::size_t size() const { return items.size(); }
};

inline std::size_t sequence_length(const Tensor<float>& x) { return x.rows(); }
inline std::size_t sequence_length(const Tensor<double>& x) { return x.rows(); }
inline std::size_t sequence_length(const std::vector<std::size_t>& tokens) { return tokens.size(); }

/// Index batches for one epoch. Shuffled, or with bucketing, sorted by length
/// and chunked with the chunk order shuffled. A trailing batch of one item is
/// merged into its predecessor so batch statistics stay defined.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                                                   bool bucketing, std::mt19937_64& rng);

/// Zero-padded batch (B×T_max×F) with the true length of each item.
template <typename T>
struct PaddedBatch {
  Tensor<T> data;
  std::vector<std::size_t> lengths;
};

template <typename T>
PaddedBatch<T> pad_and_batch(std::span<const Tensor<T>* const> items) {
  if (items.empty()) throw DimensionError("pad_and_batch: empty batch");
  const std::size_t dim = items[0]->cols();
  std::size_t longest = 0;
  for (const auto* x : items) {
    if (x->cols() != dim) {
      throw DimensionError("pad_and_batch: feature dim " + std::to_string(x->cols()) + " differs from " +
                           std::to_string(dim));
    }
    longest = std::max(longest, x->rows());
  }
  PaddedBatch<T> out{Tensor<T>({items.size(), longest, dim}), {}};
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto* x = items[b];
    std::copy(x->data(), x->data() + x->size(), out.data.data() + b * longest * dim);
    out.lengths.push_back(x->rows());
  }
  return out;
}

/// Item b of a padded batch cut back to its true length.
template <typename T>
Tensor<T> unpad(const PaddedBatch<T>& batch, std::size_t b) {
  const std::size_t longest = batch.data.shape()[1], dim = batch.data.shape()[2];
  const T* src = batch.data.data() + b * longest * dim;
  return Tensor<T>({batch.lengths.at(b), dim}, std::vector<T>(src, src + batch.lengths[b] * dim));
}

/// Logits for a padded batch; every item is scanned over its true length only.
template <typename Model, typename T>
Var<T> padded_logits(Model& model, nd::Tape<T>& tape, const BoundParams<T>& bp, const PaddedBatch<T>& batch,
                     Mode mode, bool update_running = true) {
  std::vector<Var<T>> vars;
  for (std::size_t b = 0; b < batch.lengths.size(); ++b) vars.push_back(tape.constant(unpad(batch, b)));
  return model.logits(tape, bp, std::span<const Var<T>>(vars), mode, update_running);
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// "epoch\ttrain_loss\tvalid_accuracy\twall_seconds"
std::string format_epoch_log(const EpochLog& e);

struct TrainResult {
  std::vector<EpochLog> log;
  double initial_loss = 0.0;
  double best_valid_accuracy = 0.0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t n_utterances = 0;
  double audio_seconds = 0.0;
  double inference_seconds = 0.0;
  double rtf = 0.0;
};

/// key=value lines, fixed order.
std::string format_eval_report(const EvalReport& r);
/// Writes <prefix>.txt (key=value) and <prefix>.confusion.csv.
void write_eval_report(const std::filesystem::path& prefix, const EvalReport& r);
/// Accuracy, counts and confusion; timing fields excluded.
bool same_outcome(const EvalReport& a, const EvalReport& b);

template <typename Item>
void check_labels(const Dataset<Item>& data, std::size_t n_classes, const std::string& what) {
  if (data.labels.size() != data.items.size()) throw DimensionError(what + ": labels and items differ in count");
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.labels[i] >= n_classes) {
      throw ConfigError(what + ": label " + std::to_string(data.labels[i]) +
                        (data.ids.empty() ? std::string() : " of " + data.ids[i]) + " outside the model's " +
                        std::to_string(n_classes) + " classes");
    }
  }
}

/// Per-item inference; the clock covers the model only.
template <typename Model, typename Item>
EvalReport evaluate(Model& model, const Dataset<Item>& data) {
  const std::size_t k = model.n_classes();
  check_labels(data, k, "evaluate");
  EvalReport r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    const auto post = model.posterior(data.items[i]);
    r.inference_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto pv = post.values();
    const auto pred = static_cast<std::size_t>(std::max_element(pv.begin(), pv.end()) - pv.begin());
    ++r.confusion[data.labels[i]][pred];
    if (pred == data.labels[i]) ++correct;
    if (i < data.seconds.size()) r.audio_seconds += data.seconds[i];
  }
  r.n_utterances = data.size();
  r.accuracy = data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
  r.rtf = r.audio_seconds > 0.0 ? r.inference_seconds / r.audio_seconds : 0.0;
  return r;
}

template <typename Model, typename Item>
double accuracy(Model& model, const Dataset<Item>& data) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto post = model.posterior(data.items[i]);
    const auto pv = post.values();
    if (static_cast<std::size_t>(std::max_element(pv.begin(), pv.end()) - pv.begin()) == data.labels[i]) ++correct;
  }
  return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

/// Mean cross-entropy over the data in training mode without touching the
/// running statistics.
template <typename Model, typename Item>
double dataset_loss(Model& model, const Dataset<Item>& data, std::size_t batch_size) {
  using T = typename std::remove_cvref_t<decltype(model.params())>::value_type;
  double total = 0.0;
  std::size_t begin = 0;
  while (begin < data.size()) {
    std::size_t end = std::min(data.size(), begin + batch_size);
    if (data.size() - end == 1) end = data.size();
    std::vector<const Item*> items;
    std::vector<std::size_t> labels;
    for (std::size_t i = begin; i < end; ++i) {
      items.push_back(&data.items[i]);
      labels.push_back(data.labels[i]);
    }
    nd::Tape<T> tape;
    BoundParams<T> bp(tape, model.params(), false);
    auto z = model.logits(tape, bp, std::span<const Item* const>(items), Mode::train, false);
    total += nd::softmax_xent(z, std::span<const std::size_t>(labels)).loss.value()[0] *
             static_cast<double>(items.size());
    begin = end;
  }
  return total / static_cast<double>(data.size());
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch Adam with early stopping on validation accuracy. On return the
/// model holds the parameters of the best validation epoch. A non-finite loss
/// or gradient restores that state and rethrows.
template <typename Model, typename Item>
TrainResult train_model(Model& model, const Dataset<Item>& train, const Dataset<Item>& valid, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
  using T = typename std::remove_cvref_t<decltype(model.params())>::value_type;
  if (train.size() == 0) throw DegenerateInputError("training set is empty");
  if (valid.size() == 0) throw DegenerateInputError("validation set is empty");
  check_labels(train, model.n_classes(), "training set");
  check_labels(valid, model.n_classes(), "validation set");

  TrainResult result;
  result.initial_loss = dataset_loss(model, train, cfg.batch_size);
  std::mt19937_64 rng(cfg.seed);
  AdamState<T> adam(model.params());
  Model best = model;
  std::vector<std::size_t> lengths;
  for (const auto& x : train.items) lengths.push_back(sequence_length(x));
  std::size_t since_best = 0;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    try {
      for (const auto& batch : make_batches(lengths, cfg.batch_size, cfg.bucketing, rng)) {
        std::vector<const Item*> items;
        std::vector<std::size_t> labels;
        for (auto i : batch) {
          items.push_back(&train.items[i]);
          labels.push_back(train.labels[i]);
        }
        nd::Tape<T> tape;
        BoundParams<T> bp(tape, model.params());
        auto z = model.logits(tape, bp, std::span<const Item* const>(items), Mode::train, true);
        auto loss = nd::softmax_xent(z, std::span<const std::size_t>(labels)).loss;
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
        loss_sum += lv * static_cast<double>(batch.size());
        tape.backward(loss);
        std::vector<Tensor<T>> grads;
        grads.reserve(bp.size());
        for (std::size_t i = 0; i < bp.size(); ++i) grads.push_back(tape.grad(bp.at(i)));
        if (cfg.clip_norm > 0.0) {
          double sq = 0.0;
          for (const auto& g : grads)
            for (T v : g.values()) sq += static_cast<double>(v) * v;
          const double norm = std::sqrt(sq);
          if (norm > cfg.clip_norm) {
            const T s = static_cast<T>(cfg.clip_norm / norm);
            for (auto& g : grads)
              for (auto& v : g.values()) v *= s;
          }
        }
        adam_step(model.params(), std::span<const Tensor<T>>(grads), adam, cfg.adam);
      }
    } catch (const NumericError&) {
      if (have_best) model = best;
      throw;
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(train.size());
    e.valid_accuracy = accuracy(model, valid);
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);

    if (!have_best || e.valid_accuracy > result.best_valid_accuracy) {
      result.best_valid_accuracy = e.valid_accuracy;
      result.best_epoch = epoch;
      best = model;
      have_best = true;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
    // Perfect validation accuracy cannot be improved on, so the rest of the
    // patience window would leave the best state unchanged.
    if (e.valid_accuracy >= 1.0) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  model = best;
  return result;
}

}  // namespace slu::nn
