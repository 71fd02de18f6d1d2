#include "slu/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "slu/dsp.hpp"
#include "slu/error.hpp"
#include "slu/seed.hpp"

namespace slu::corpus {

namespace {

const char* const kDomainNames[] = {"music", "weather", "news", "sports", "optin"};
const char* const kActionNames[] = {"play", "stop", "what", "when", "where", "next", "tell"};
const char* const kFillerNames[] = {"please", "now"};

constexpr double kLowHz = 300.0;
constexpr double kHighHz = 3800.0;
constexpr double kWordSeconds = 0.30;
constexpr double kMinGap = 0.05;

std::string indexed_name(const char* const* names, std::size_t count, int i, const char* prefix) {
  if (static_cast<std::size_t>(i) < count) return names[i];
  return std::string(prefix) + std::to_string(i);
}

// Renders one tone into out starting at offset: raised-cosine 10 ms edges,
// AM depth 0.3, linear sweep from f0 to f0·(1 + sweep).
void render_tone(std::vector<double>& out, std::size_t offset, std::size_t length, double f0,
                 double sweep, double am_rate, double amplitude, int sample_rate) {
  const double sr = sample_rate;
  const double ramp = std::min(0.01 * sr, length / 2.0);
  double phase = 0.0;
  for (std::size_t i = 0; i < length && offset + i < out.size(); ++i) {
    const double t = i / sr;
    const double frac = static_cast<double>(i) / static_cast<double>(length);
    const double f = f0 * (1.0 + sweep * frac);
    phase += 2.0 * std::numbers::pi * f / sr;
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
    if (length - i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (length - i) / ramp);
    const double am = 1.0 - 0.3 * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * am_rate * t));
    out[offset + i] += amplitude * env * am * std::sin(phase);
  }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void add_dither(std::vector<double>& x, double level, std::mt19937_64& rng) {
  if (level <= 0.0) return;
  std::normal_distribution<double> n(0.0, level);
  for (auto& v : x) v += n(rng);
}

std::string make_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%05d", index);
  return buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_domains < 1 || intents_per_domain < 1) {
    throw ConfigError("synth: n_domains and intents_per_domain must be positive");
  }
  if (sample_rate <= 0) throw ConfigError("synth.sample_rate must be positive");
  if (!(min_seconds > 0.0) || min_seconds > max_seconds) {
    throw ConfigError("synth: need 0 < min_seconds <= max_seconds");
  }
  const double longest = 3 * kWordSeconds * (1.0 + duration_jitter) + 4 * kMinGap;
  if (max_seconds < longest) {
    throw ConfigError("synth.max_seconds must be at least " + std::to_string(longest) +
                      " to fit the longest phrase");
  }
  if (filler_prob < 0.0 || filler_prob > 1.0) throw ConfigError("synth.filler_prob must be in [0, 1]");
  if (pitch_jitter < 0.0 || pitch_jitter > 0.2 || duration_jitter < 0.0 || duration_jitter > 0.5) {
    throw ConfigError("synth: jitter out of range");
  }
}

std::vector<WordSignature> word_inventory(const SynthSpec& spec) {
  std::vector<std::string> names;
  for (int d = 0; d < spec.n_domains; ++d) names.push_back(indexed_name(kDomainNames, 5, d, "domain"));
  for (int a = 0; a < spec.intents_per_domain; ++a) names.push_back(indexed_name(kActionNames, 7, a, "action"));
  for (const char* f : kFillerNames) names.push_back(f);

  // Base frequencies interleave word groups over a mel-spaced grid so that
  // neighbouring grid points belong to different roles.
  const std::size_t n = names.size();
  const double lo = dsp::hz_to_mel(kLowHz), hi = dsp::hz_to_mel(kHighHz);
  std::vector<std::size_t> slot(n);
  for (std::size_t i = 0; i < n; ++i) slot[i] = (i * 5) % n;
  if (std::gcd(n, std::size_t{5}) != 1) {
    for (std::size_t i = 0; i < n; ++i) slot[i] = i;
  }
  std::vector<WordSignature> words;
  for (std::size_t i = 0; i < n; ++i) {
    const double mel = lo + (hi - lo) * static_cast<double>(slot[i]) / static_cast<double>(n - 1);
    WordSignature w;
    w.name = names[i];
    w.base_hz = dsp::mel_to_hz(mel);
    w.seconds = 0.18 + 0.12 * static_cast<double>(i % 4) / 3.0;
    w.am_rate_hz = 4.0 + static_cast<double>(i % 3) * 3.0;
    w.sweep = (i % 2 == 0) ? 0.04 : -0.04;
    words.push_back(w);
  }
  return words;
}

SynthUtterance synth_utterance(int intent_id, const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (intent_id < 0 || intent_id >= spec.n_intents()) {
    throw ConfigError("unknown intent id " + std::to_string(intent_id) + " (have " +
                      std::to_string(spec.n_intents()) + ")");
  }
  const auto words = word_inventory(spec);
  const int domain = intent_id / spec.intents_per_domain;
  const int action = intent_id % spec.intents_per_domain;
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> phrase;
  const std::size_t dword = static_cast<std::size_t>(domain);
  const std::size_t aword = static_cast<std::size_t>(spec.n_domains + action);
  if (uniform(rng, 0.0, 1.0) < 0.5) {
    phrase = {aword, dword};
  } else {
    phrase = {dword, aword};
  }
  if (uniform(rng, 0.0, 1.0) < spec.filler_prob) {
    const std::size_t filler = words.size() - 2 + (uniform(rng, 0.0, 1.0) < 0.5 ? 0 : 1);
    if (uniform(rng, 0.0, 1.0) < 0.5) {
      phrase.insert(phrase.begin(), filler);
    } else {
      phrase.push_back(filler);
    }
  }

  const double sr = spec.sample_rate;
  struct Placed {
    std::size_t word;
    double seconds, hz, gain;
  };
  std::vector<Placed> placed;
  double speech = 0.0;
  for (auto w : phrase) {
    Placed p{w, words[w].seconds * (1.0 + uniform(rng, -spec.duration_jitter, spec.duration_jitter)),
             words[w].base_hz * (1.0 + uniform(rng, -spec.pitch_jitter, spec.pitch_jitter)),
             0.3 * std::pow(10.0, uniform(rng, -spec.gain_jitter_db, spec.gain_jitter_db) / 20.0)};
    speech += p.seconds;
    placed.push_back(p);
  }
  const std::size_t n_gaps = placed.size() + 1;
  double total = uniform(rng, spec.min_seconds, spec.max_seconds);
  total = std::max(total, speech + kMinGap * static_cast<double>(n_gaps));
  std::vector<double> gap_weights(n_gaps);
  double wsum = 0.0;
  for (auto& g : gap_weights) {
    g = uniform(rng, 0.2, 1.0);
    wsum += g;
  }
  const double spare = total - speech - kMinGap * static_cast<double>(n_gaps);

  SynthUtterance out;
  out.audio.sample_rate = spec.sample_rate;
  out.audio.samples.assign(static_cast<std::size_t>(std::lround(total * sr)), 0.0);
  double cursor = 0.0;
  for (std::size_t i = 0; i < placed.size(); ++i) {
    cursor += kMinGap + spare * gap_weights[i] / wsum;
    const auto& p = placed[i];
    const auto& sig = words[p.word];
    render_tone(out.audio.samples, static_cast<std::size_t>(std::lround(cursor * sr)),
                static_cast<std::size_t>(std::lround(p.seconds * sr)), p.hz, sig.sweep, sig.am_rate_hz,
                p.gain, spec.sample_rate);
    cursor += p.seconds;
    if (!out.transcript.empty()) out.transcript += ' ';
    out.transcript += sig.name;
  }
  add_dither(out.audio.samples, spec.dither, rng);
  out.domain = domain;
  out.intent = intent_id;
  return out;
}

std::vector<SynthItem> generate_corpus(const SynthSpec& spec, int n_per_intent,
                                       const SplitFractions& fractions) {
  spec.validate();
  if (n_per_intent < 1) throw ConfigError("synth: n_per_intent must be positive");
  if (fractions.train < 0 || fractions.valid < 0 || fractions.eval < 0 ||
      std::abs(fractions.train + fractions.valid + fractions.eval - 1.0) > 1e-9) {
    throw ConfigError("synth: split fractions must be non-negative and sum to 1");
  }
  std::vector<SynthItem> items;
  items.reserve(static_cast<std::size_t>(spec.n_intents() * n_per_intent));
  for (int intent = 0; intent < spec.n_intents(); ++intent) {
    // Stratified split: per intent, a seeded permutation is cut by fraction.
    const int n = n_per_intent;
    int n_train = static_cast<int>(std::lround(n * fractions.train));
    int n_valid = static_cast<int>(std::lround(n * fractions.valid));
    if (n >= 3) {
      if (fractions.valid > 0 && n_valid == 0) n_valid = 1;
      const int n_eval_wanted = fractions.eval > 0 ? 1 : 0;
      while (n_train + n_valid > n - n_eval_wanted && n_train > 1) --n_train;
    }
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) order[static_cast<std::size_t>(k)] = k;
    std::mt19937_64 split_rng(derive_seed(spec.seed, "split/" + std::to_string(intent)));
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<Split> split_of(static_cast<std::size_t>(n), Split::eval);
    for (int k = 0; k < n; ++k) {
      const int slot = order[static_cast<std::size_t>(k)];
      split_of[static_cast<std::size_t>(slot)] =
          k < n_train ? Split::train : (k < n_train + n_valid ? Split::valid : Split::eval);
    }
    for (int k = 0; k < n; ++k) {
      const std::string id = make_id(intent * n_per_intent + k);
      auto utt = synth_utterance(intent, spec, derive_seed(spec.seed, id));
      SynthItem item;
      item.record.id = id;
      item.record.split = split_of[static_cast<std::size_t>(k)];
      item.record.audio_path = "audio/" + std::string(to_string(item.record.split)) + "/" + id + ".wav";
      item.record.transcript = std::move(utt.transcript);
      item.record.domain_label = utt.domain;
      item.record.intent_label = utt.intent;
      item.audio = std::move(utt.audio);
      items.push_back(std::move(item));
    }
  }
  return items;
}

Manifest build_synthetic_corpus(const SynthSpec& spec, int n_per_intent, const SplitFractions& fractions,
                                const std::filesystem::path& out_dir) {
  auto items = generate_corpus(spec, n_per_intent, fractions);
  Manifest m;
  m.base_dir = out_dir;
  for (auto s : {Split::train, Split::valid, Split::eval}) {
    std::filesystem::create_directories(out_dir / "audio" / std::string(to_string(s)));
  }
  for (auto& item : items) {
    write_wav(out_dir / item.record.audio_path, item.audio);
    m.records.push_back(std::move(item.record));
  }
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

void ProbeSpec::validate() const {
  if (n_classes < 2) throw ConfigError("probe: n_classes must be at least 2");
  if (!(tone_seconds > 0.0) || tone_seconds >= seconds) {
    throw ConfigError("probe: need 0 < tone_seconds < seconds");
  }
  if (n_distractors < 0 || distractor_seconds >= seconds) throw ConfigError("probe: bad distractor setup");
}

ProbeUtterance synth_probe_utterance(int label, const ProbeSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (label < 0 || label >= spec.n_classes) throw ConfigError("probe: label out of range");
  std::mt19937_64 rng(seed);
  const double sr = spec.sample_rate;
  const double lo = dsp::hz_to_mel(kLowHz), hi = dsp::hz_to_mel(kHighHz);
  // Class tones and distractor tones alternate on one mel grid.
  const int grid = 2 * spec.n_classes + 2;
  auto grid_hz = [&](int k) { return dsp::mel_to_hz(lo + (hi - lo) * k / (grid - 1)); };

  ProbeUtterance out;
  out.label = label;
  out.audio.sample_rate = spec.sample_rate;
  const auto total = static_cast<std::size_t>(std::lround(spec.seconds * sr));
  out.audio.samples.assign(total, 0.0);
  const auto dlen = static_cast<std::size_t>(std::lround(spec.distractor_seconds * sr));
  for (int i = 0; i < spec.n_distractors; ++i) {
    const int k = 2 * static_cast<int>(uniform(rng, 0.0, spec.n_classes + 1.0 - 1e-9)) + 1;
    const auto start = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(total - dlen)));
    render_tone(out.audio.samples, start, dlen, grid_hz(k) * (1.0 + uniform(rng, -0.02, 0.02)), 0.0, 5.0,
                0.2, spec.sample_rate);
  }
  const auto tlen = static_cast<std::size_t>(std::lround(spec.tone_seconds * sr));
  const auto start = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(total - tlen)));
  render_tone(out.audio.samples, start, tlen, grid_hz(2 * label) * (1.0 + uniform(rng, -0.02, 0.02)), 0.03,
              6.0, 0.3, spec.sample_rate);
  out.region_begin = start;
  out.region_end = start + tlen;
  add_dither(out.audio.samples, spec.dither, rng);
  return out;
}

}  // namespace slu::corpus
