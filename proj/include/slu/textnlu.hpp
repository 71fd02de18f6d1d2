#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slu/checkpoint.hpp"
#include "slu/model.hpp"

namespace slu::text {

using nd::Tensor;
using nd::Var;

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kUnk = 1;

/// Lowercased, whitespace-separated tokens.
std::vector<std::string> tokenize(std::string_view sentence);

class Vocab {
 public:
  /// Tokens seen at least min_count times, indexed from 2 by
  /// (count descending, token ascending).
  static Vocab build(std::span<const std::string> transcripts, std::size_t min_count = 1);
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size() + 2; }  // reserved slots included
  std::size_t index_of(std::string_view token) const;    // kUnk when absent
  const std::string& token(std::size_t index) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::size_t> encode(std::string_view sentence) const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;  // index − 2
  std::unordered_map<std::string, std::size_t> index_;
};

enum class CellType { gru, lstm };
CellType parse_cell(std::string_view s);

struct TextModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 128;
  std::size_t hidden = 256;  // per direction
  std::size_t n_layers = 2;
  std::size_t n_classes = 35;
  CellType cell = CellType::gru;

  void validate() const;
};

/// Embedding → stacked bidirectional GRU → both directions' final states →
/// affine → logits.
template <typename T>
class TextModel {
 public:
  using Item = std::vector<std::size_t>;

  TextModel() = default;
  TextModel(TextModelConfig cfg, std::uint64_t seed);

  const TextModelConfig& config() const { return cfg_; }
  std::size_t n_classes() const { return cfg_.n_classes; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

  /// Readout vector (1×2H) for one token sequence.
  Var<T> encode(nd::Tape<T>& tape, const nn::BoundParams<T>& bp, const Item& tokens) const;

  Var<T> logits(nd::Tape<T>& tape, const nn::BoundParams<T>& bp, std::span<const Item* const> items, nn::Mode mode,
                bool update_running = true);
  Tensor<T> posterior(const Item& tokens);

  std::size_t count_params() const { return params_.scalar_count(); }

 private:
  TextModelConfig cfg_;
  nn::ParamSet<T> params_;
};

extern template class TextModel<float>;
extern template class TextModel<double>;

/// Enumerated from the configuration alone.
std::size_t count_params_text(const TextModelConfig& cfg);

struct CorruptionMix {
  double sub = 6.0, del = 2.0, ins = 2.0;  // relative weights
};

/// Each token independently: substituted, deleted, or followed by an inserted
/// token, with total probability target_wer split by mix.
std::vector<std::string> corrupt_words(std::span<const std::string> tokens, const Vocab& vocab, double target_wer,
                                       std::uint64_t seed, CorruptionMix mix = {});

/// Word-level Levenshtein distance.
std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);

template <typename T>
nn::Checkpoint to_checkpoint(const TextModel<T>& model, const Vocab& vocab);

template <typename T>
struct LoadedText {
  TextModel<T> model;
  Vocab vocab;
};

template <typename T>
LoadedText<T> text_model_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace slu::text
