#include "slu/model.hpp"

#include <cmath>

namespace slu::nn {

std::string_view to_string(Pooling p) { return p == Pooling::max ? "max" : "last"; }

Pooling parse_pooling(std::string_view s) {
  if (s == "max") return Pooling::max;
  if (s == "last") return Pooling::last;
  throw ConfigError("unknown pooling '" + std::string(s) + "' (expected max or last)");
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder.input_dim must be positive");
  if (n_layers == 0) throw ConfigError("encoder.n_layers must be at least 1");
  if (hidden == 0) throw ConfigError("encoder.hidden must be positive");
  if (stride == 0) throw ConfigError("encoder.stride must be at least 1");
}

std::size_t EncoderConfig::output_length(std::size_t frames) const {
  for (std::size_t l = 0; l < n_layers; ++l) frames = subsampled_length(frames, stride);
  return frames;
}

void DecoderConfig::validate() const {
  if (ff_hidden == 0) throw ConfigError("decoder.ff_hidden must be positive");
  if (n_classes < 2) throw ConfigError("decoder.n_classes must be at least 2");
}

template <typename T>
void add_decoder_params(ParamSet<T>& params, std::size_t input, const DecoderConfig& cfg, std::mt19937_64& rng) {
  const double fc1 = std::sqrt(6.0 / static_cast<double>(input + cfg.ff_hidden));
  params.add("dec.fc1.W", uniform_tensor<T>({cfg.ff_hidden, input}, fc1, rng));
  params.add("dec.fc1.b", Tensor<T>({cfg.ff_hidden}));
  if (cfg.batch_norm) {
    params.add("dec.bn.gamma", Tensor<T>({cfg.ff_hidden}, T{1}));
    params.add("dec.bn.beta", Tensor<T>({cfg.ff_hidden}));
  }
  const double out = std::sqrt(6.0 / static_cast<double>(cfg.ff_hidden + cfg.n_classes));
  params.add("dec.out.W", uniform_tensor<T>({cfg.n_classes, cfg.ff_hidden}, out, rng));
  params.add("dec.out.b", Tensor<T>({cfg.n_classes}));
}

template <typename T>
SpeechModel<T>::SpeechModel(EncoderConfig enc, DecoderConfig dec, std::uint64_t seed, BatchNormConfig bn)
    : enc_(enc), dec_(dec), bn_(dec.ff_hidden, bn) {
  enc_.validate();
  dec_.validate();
  std::mt19937_64 rng(seed);
  std::size_t input = enc_.input_dim;
  for (std::size_t l = 0; l < enc_.n_layers; ++l) {
    add_gru_direction(params_, encoder_prefix(l, true), input, enc_.hidden, rng);
    add_gru_direction(params_, encoder_prefix(l, false), input, enc_.hidden, rng);
    input = 2 * enc_.hidden;
  }
  add_decoder_params(params_, 2 * enc_.hidden, dec_, rng);
}

template <typename T>
Var<T> SpeechModel<T>::pooled(Var<T> features, const BoundParams<T>& bp) const {
  if (features.value().rank() != 2) {
    throw DimensionError("speech model: features must be T×F, got " + nd::shape_str(features.shape()));
  }
  auto enc = encoder_forward(features, enc_, bp);
  return dec_.pooling == Pooling::max ? max_pool_time(enc.output) : last_step_readout(enc.fwd_last, enc.bwd_first);
}

template <typename T>
Var<T> SpeechModel<T>::logits(nd::Tape<T>& /*tape*/, const BoundParams<T>& bp, std::span<const Var<T>> utterances,
                              Mode mode, bool update_running) {
  if (utterances.empty()) throw DimensionError("speech model: empty batch");
  std::vector<Var<T>> rows;
  rows.reserve(utterances.size());
  for (const auto& u : utterances) rows.push_back(pooled(u, bp));
  auto batch = rows.size() == 1 ? rows[0] : nd::concat_rows<T>(rows);
  return decoder_logits(batch, dec_, bp, bn_, mode, update_running);
}

template <typename T>
Var<T> SpeechModel<T>::logits(nd::Tape<T>& tape, const BoundParams<T>& bp, std::span<const Item* const> items,
                              Mode mode, bool update_running) {
  std::vector<Var<T>> vars;
  vars.reserve(items.size());
  for (const auto* item : items) vars.push_back(tape.constant(*item));
  return logits(tape, bp, std::span<const Var<T>>(vars), mode, update_running);
}

template <typename T>
Tensor<T> SpeechModel<T>::posterior(const Item& features) {
  nd::Tape<T> tape;
  BoundParams<T> bp(tape, params_, false);
  const Item* items[] = {&features};
  auto z = logits(tape, bp, std::span<const Item* const>(items), Mode::infer, false);
  return nd::softmax_rows(z.value());
}

template void add_decoder_params<float>(ParamSet<float>&, std::size_t, const DecoderConfig&, std::mt19937_64&);
template void add_decoder_params<double>(ParamSet<double>&, std::size_t, const DecoderConfig&, std::mt19937_64&);
template class SpeechModel<float>;
template class SpeechModel<double>;

}  // namespace slu::nn
