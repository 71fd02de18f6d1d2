#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <string>

#include "slu/dsp.hpp"
#include "slu/error.hpp"
#include "slu/manifest.hpp"
#include "slu/synth.hpp"
#include "slu/wav.hpp"

using namespace slu;
using namespace slu::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slu_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void put_u16(std::string& s, std::size_t at, std::uint16_t v) {
  s[at] = static_cast<char>(v & 0xff);
  s[at + 1] = static_cast<char>(v >> 8);
}

// Dominant mel bin of each frame that carries signal.
std::set<std::size_t> dominant_bins(const Audio& a) {
  auto f = dsp::extract_logmel(a.samples, a.sample_rate, dsp::DspConfig{});
  std::set<std::size_t> bins;
  for (std::size_t t = 0; t < f.num_frames(); ++t) {
    auto row = f.frames.row(t);
    auto it = std::max_element(row.begin(), row.end());
    if (*it > -6.0) bins.insert(static_cast<std::size_t>(it - row.begin()));
  }
  return bins;
}

}  // namespace

TEST_CASE("wav round trip") {
  auto dir = scratch("wav");
  Audio a;
  a.sample_rate = 16000;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 16000; ++i) a.samples.push_back(quantize_pcm16(u(rng)));
  write_wav(dir / "a.wav", a);
  auto b = read_wav(dir / "a.wav");
  CHECK(b.sample_rate == 16000);
  REQUIRE(b.samples.size() == 16000);
  CHECK(b.samples == a.samples);
  CHECK(b.seconds() == 1.0);

  Audio loud{{2.0, -2.0, 0.5}, 8000};
  write_wav(dir / "clip.wav", loud);
  auto c = read_wav(dir / "clip.wav");
  CHECK(c.samples[0] == 32767.0 / 32768.0);
  CHECK(c.samples[1] == -1.0);
  CHECK(c.samples[2] == 0.5);
}

TEST_CASE("wav header errors name the field") {
  auto dir = scratch("wavbad");
  write_wav(dir / "ok.wav", Audio{std::vector<double>(100, 0.1), 16000});
  const auto good = slurp(dir / "ok.wav");
  auto expect_error = [&](std::string bytes, const std::string& field) {
    std::ofstream(dir / "bad.wav", std::ios::binary) << bytes;
    try {
      read_wav(dir / "bad.wav");
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  auto stereo = good;
  put_u16(stereo, 22, 2);
  expect_error(stereo, "num_channels");
  auto floaty = good;
  put_u16(floaty, 20, 3);
  expect_error(floaty, "audio_format");
  auto bits = good;
  put_u16(bits, 34, 8);
  expect_error(bits, "bits_per_sample");
  expect_error(good.substr(0, 30), "truncated");
  expect_error("JUNKJUNKJUNK", "RIFF");
}

TEST_CASE("manifest round trip and validation") {
  auto dir = scratch("manifest");
  Manifest m;
  m.base_dir = dir;
  m.records.push_back({"u00001", "audio/train/u00001.wav", "play music", 0, 0, Split::train, std::nullopt});
  m.records.push_back({"u00002", "audio/eval/u00002.wav", "weather what", 1, 9, Split::eval,
                       AugmentInfo{"u00000", "rir/r0.wav", "noise/n1.wav", 12.5}});
  write_manifest(dir / "manifest.jsonl", m);
  auto back = read_manifest(dir / "manifest.jsonl");
  CHECK(back.records == m.records);
  CHECK(back.base_dir == dir);
  CHECK(back.in_split(Split::eval).size() == 1);
  CHECK(back.audio_file(back.records[0]) == dir / "audio/train/u00001.wav");

  const auto text = slurp(dir / "manifest.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("snr_db") != std::string::npos);

  CHECK_NOTHROW(validate_manifest(m, {}, false));
  try {
    validate_manifest(m, {}, true);
    FAIL("expected missing files");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("u00001") != std::string::npos);
    CHECK(std::string(e.what()).find("u00002") != std::string::npos);
  }
  auto dup = m;
  dup.records[1].id = "u00001";
  CHECK_THROWS_AS(validate_manifest(dup, {}, false), FormatError);
  auto bad_label = m;
  bad_label.records[0].intent_label = 35;
  CHECK_THROWS_AS(validate_manifest(bad_label, {}, false), FormatError);
  bad_label.records[0].intent_label = 0;
  bad_label.records[0].domain_label = -1;
  CHECK_THROWS_AS(validate_manifest(bad_label, {}, false), FormatError);

  std::ofstream(dir / "broken.jsonl") << "{\"id\": \"x\"\n";
  CHECK_THROWS_AS(read_manifest(dir / "broken.jsonl"), FormatError);
  CHECK_THROWS_AS(parse_split("test"), FormatError);
}

TEST_CASE("synthetic words") {
  SynthSpec spec;
  auto words = word_inventory(spec);
  CHECK(words.size() == 14);
  std::set<double> freqs;
  for (const auto& w : words) freqs.insert(w.base_hz);
  CHECK(freqs.size() == words.size());
  CHECK(spec.n_intents() == 35);
}

TEST_CASE("synthetic utterances") {
  SynthSpec spec;
  SUBCASE("deterministic per seed") {
    auto a = synth_utterance(12, spec, 77);
    auto b = synth_utterance(12, spec, 77);
    auto c = synth_utterance(12, spec, 78);
    CHECK(a.audio.samples == b.audio.samples);
    CHECK(a.transcript == b.transcript);
    CHECK(a.audio.samples != c.audio.samples);
    CHECK(a.domain == 1);
    CHECK(a.intent == 12);
  }
  SUBCASE("duration stays in range") {
    for (int i = 0; i < 35; ++i) {
      auto u = synth_utterance(i, spec, 100 + i);
      CHECK(u.audio.seconds() >= spec.min_seconds - 1e-3);
      CHECK(u.audio.seconds() <= spec.max_seconds + 1e-3);
    }
  }
  SUBCASE("unknown intent") { CHECK_THROWS_AS(synth_utterance(35, spec, 1), ConfigError); }
  SUBCASE("distinct intents have distinct spectral profiles") {
    spec.filler_prob = 0.0;
    std::map<int, std::set<std::size_t>> prof;
    for (int i : {0, 1, 7, 8, 20, 34}) prof[i] = dominant_bins(synth_utterance(i, spec, 5).audio);
    for (auto a = prof.begin(); a != prof.end(); ++a)
      for (auto b = std::next(a); b != prof.end(); ++b) CHECK(a->second != b->second);
  }
}

TEST_CASE("synthetic corpus") {
  SynthSpec spec;
  auto items = generate_corpus(spec, 20, {});
  CHECK(items.size() == 700);
  std::map<Split, std::set<int>> intents_by_split;
  std::set<std::string> ids;
  for (const auto& it : items) {
    intents_by_split[it.record.split].insert(it.record.intent_label);
    CHECK(ids.insert(it.record.id).second);
    CHECK(it.record.domain_label == it.record.intent_label / 7);
  }
  for (auto s : {Split::train, Split::valid, Split::eval}) CHECK(intents_by_split[s].size() == 35);
  CHECK(std::is_sorted(items.begin(), items.end(),
                       [](const auto& a, const auto& b) { return a.record.id < b.record.id; }));
  CHECK_THROWS_AS(generate_corpus(spec, 20, {0.7, 0.2, 0.2}), ConfigError);
}

TEST_CASE("corpus regeneration is byte-identical") {
  SynthSpec spec;
  spec.n_domains = 2;
  spec.intents_per_domain = 2;
  auto a = scratch("regen_a"), b = scratch("regen_b");
  auto ma = build_synthetic_corpus(spec, 10, {}, a);
  auto mb = build_synthetic_corpus(spec, 10, {}, b);
  CHECK(ma.records == mb.records);
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  for (const auto& r : ma.records) CHECK(slurp(a / r.audio_path) == slurp(b / r.audio_path));
  auto loaded = read_manifest(a / "manifest.jsonl");
  CHECK_NOTHROW(validate_manifest(loaded, {2, 4}, true));
  std::set<std::string> seen;
  for (const auto& r : loaded.records) CHECK(seen.insert(r.id).second);
}

TEST_CASE("probe utterances") {
  ProbeSpec spec;
  auto p = synth_probe_utterance(1, spec, 9);
  CHECK(p.audio.seconds() == doctest::Approx(10.0));
  CHECK(p.region_end - p.region_begin == static_cast<std::size_t>(0.5 * 16000));
  CHECK(p.region_end <= p.audio.samples.size());
  auto q = synth_probe_utterance(1, spec, 10);
  CHECK(p.region_begin != q.region_begin);
  CHECK_THROWS_AS(synth_probe_utterance(2, spec, 1), ConfigError);
}
