#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slu/manifest.hpp"
#include "slu/wav.hpp"

namespace slu::corpus {

/// Acoustic signature of one synthetic "word": a short amplitude-modulated
/// tone with a linear pitch sweep.
struct WordSignature {
  std::string name;
  double base_hz = 0.0;
  double seconds = 0.0;
  double am_rate_hz = 0.0;
  double sweep = 0.0;  // relative frequency change over the word
};

/// Tonal command language: every intent is a (domain word, action word) pair,
/// spoken in either order, optionally with a filler word.
struct SynthSpec {
  int n_domains = 5;
  int intents_per_domain = 7;
  int sample_rate = 16000;
  double min_seconds = 1.0;
  double max_seconds = 1.6;
  double filler_prob = 0.3;
  double gain_jitter_db = 3.0;
  double pitch_jitter = 0.02;
  double duration_jitter = 0.1;
  double dither = 3e-4;
  std::uint64_t seed = 1;

  int n_intents() const { return n_domains * intents_per_domain; }
  void validate() const;
};

/// Words of the language: domain words, then action words, then fillers.
std::vector<WordSignature> word_inventory(const SynthSpec& spec);

struct SynthUtterance {
  Audio audio;
  std::string transcript;
  int domain = 0;
  int intent = 0;
};

SynthUtterance synth_utterance(int intent_id, const SynthSpec& spec, std::uint64_t seed);

struct SplitFractions {
  double train = 0.7;
  double valid = 0.15;
  double eval = 0.15;
};

struct SynthItem {
  Record record;
  Audio audio;
};

/// Generates n_per_intent utterances per intent with a split stratified by
/// intent. Records are ordered by id; audio paths are audio/<split>/<id>.wav.
std::vector<SynthItem> generate_corpus(const SynthSpec& spec, int n_per_intent,
                                       const SplitFractions& fractions);

/// generate_corpus + writes WAVs and manifest.jsonl under out_dir.
Manifest build_synthetic_corpus(const SynthSpec& spec, int n_per_intent, const SplitFractions& fractions,
                                const std::filesystem::path& out_dir);

/// Long-utterance probe task: a single class-discriminative tone placed at a
/// uniformly random position among class-independent distractor tones.
struct ProbeSpec {
  int n_classes = 2;
  double seconds = 10.0;
  double tone_seconds = 0.5;
  int n_distractors = 6;
  double distractor_seconds = 0.4;
  int sample_rate = 16000;
  double dither = 3e-4;

  void validate() const;
};

struct ProbeUtterance {
  Audio audio;
  int label = 0;
  std::size_t region_begin = 0;  // sample range of the discriminative tone
  std::size_t region_end = 0;
};

ProbeUtterance synth_probe_utterance(int label, const ProbeSpec& spec, std::uint64_t seed);

}  // namespace slu::corpus
