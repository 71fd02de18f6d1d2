#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slu/augment.hpp"
#include "slu/checkpoint.hpp"
#include "slu/dsp.hpp"
#include "slu/manifest.hpp"
#include "slu/model.hpp"
#include "slu/synth.hpp"
#include "slu/textnlu.hpp"
#include "slu/train.hpp"

namespace slu::pipeline {

enum class Task { domain, intent };
std::string_view to_string(Task t);
Task parse_task(std::string_view s);

struct AugmentSettings {
  int copies = 2;
  double snr_lo = 5.0;
  double snr_hi = 25.0;
  std::uint64_t seed = 1;
  std::string rir_dir;    // *.wav files; empty means synthesize a pool
  std::string noise_dir;  // likewise
  int n_rirs = 8;
  int n_noises = 4;
  double t60_lo = 0.2;
  double t60_hi = 0.8;
  std::vector<corpus::Split> splits = {corpus::Split::train};
  bool replace = false;  // drop the clean originals of augmented splits
};

struct TextSettings {
  std::size_t embedding_dim = 128;
  std::size_t hidden = 256;
  std::size_t n_layers = 2;
  std::size_t min_count = 1;
  text::CellType cell = text::CellType::gru;
  double wer = 0.0;  // word corruption applied to evaluated transcripts
};

struct RunConfig {
  dsp::DspConfig dsp;
  nn::EncoderConfig encoder;  // input_dim follows dsp.n_mels
  nn::DecoderConfig decoder;  // n_classes follows the task
  nn::BatchNormConfig bn;
  nn::TrainConfig train;
  Task task = Task::intent;
  nn::Precision precision = nn::Precision::f32;
  AugmentSettings augment;
  corpus::SynthSpec synth;
  int n_per_intent = 20;
  corpus::SplitFractions fractions;
  TextSettings text;
  std::size_t threads = 1;
  std::uint64_t seed = 1;

  std::size_t n_classes(Task t) const;
  corpus::LabelInventory inventory() const { return {synth.n_domains, synth.n_intents()}; }
  nn::EncoderConfig encoder_for_features() const;
  nn::DecoderConfig decoder_for(Task t) const;
  text::TextModelConfig text_model(std::size_t vocab_size, Task t) const;

  /// Every section checked by its owning module; throws ConfigError.
  void validate() const;
};

/// INI text: `[section]` headers and `key = value` lines; `;` or `#` start a
/// comment line. Unknown sections and keys are rejected. Section seeds left
/// unset derive from [run] seed.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Replaces threads with the value of SLU_THREADS when that is set.
void apply_environment(RunConfig& cfg);

/// Fully resolved configuration in the same INI grammar.
std::string echo_config(const RunConfig& cfg);

std::size_t label_of(const corpus::Record& r, Task t);

/// Features of every record in a split, read from <feature_dir>/<id>.feat
/// when a cache directory is given, computed from audio otherwise.
template <typename T>
nn::Dataset<nd::Tensor<T>> speech_dataset(const corpus::Manifest& manifest, corpus::Split split, Task task,
                                          const dsp::DspConfig& dsp,
                                          const std::optional<std::filesystem::path>& feature_dir = std::nullopt);

/// Token ids of every transcript in a split, optionally corrupted at word
/// error rate `wer` (seeded per record id). A transcript corrupted down to
/// nothing becomes a single unknown token.
nn::Dataset<std::vector<std::size_t>> text_dataset(const corpus::Manifest& manifest, corpus::Split split, Task task,
                                                   const text::Vocab& vocab, double wer = 0.0,
                                                   std::uint64_t seed = 0);

std::vector<std::string> transcripts(const corpus::Manifest& manifest, corpus::Split split);

/// Writes <out_dir>/<id>.feat for every record; returns the count.
std::size_t featurize_manifest(const corpus::Manifest& manifest, const dsp::DspConfig& dsp,
                               const std::filesystem::path& out_dir);

/// Pools from the configured directories, or synthesized under pool_dir.
augment::Pools resolve_pools(const RunConfig& cfg, const std::filesystem::path& pool_dir);

}  // namespace slu::pipeline
