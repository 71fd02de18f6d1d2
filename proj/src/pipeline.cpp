#include "slu/pipeline.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "slu/seed.hpp"
#include "slu/wav.hpp"

namespace slu::pipeline {

std::string_view to_string(Task t) { return t == Task::domain ? "domain" : "intent"; }

Task parse_task(std::string_view s) {
  if (s == "domain") return Task::domain;
  if (s == "intent") return Task::intent;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected domain or intent)");
}

std::size_t RunConfig::n_classes(Task t) const {
  return static_cast<std::size_t>(t == Task::domain ? synth.n_domains : synth.n_intents());
}

nn::EncoderConfig RunConfig::encoder_for_features() const {
  auto e = encoder;
  e.input_dim = dsp.n_mels;
  return e;
}

nn::DecoderConfig RunConfig::decoder_for(Task t) const {
  auto d = decoder;
  d.n_classes = n_classes(t);
  return d;
}

text::TextModelConfig RunConfig::text_model(std::size_t vocab_size, Task t) const {
  text::TextModelConfig c;
  c.vocab_size = vocab_size;
  c.embedding_dim = text.embedding_dim;
  c.hidden = text.hidden;
  c.n_layers = text.n_layers;
  c.n_classes = n_classes(t);
  c.cell = text.cell;
  return c;
}

void RunConfig::validate() const {
  dsp.validate();
  encoder_for_features().validate();
  decoder_for(task).validate();
  if (!(bn.momentum >= 0.0 && bn.momentum < 1.0)) throw ConfigError("decoder.bn_momentum must be in [0, 1)");
  if (!(bn.epsilon > 0.0)) throw ConfigError("decoder.bn_epsilon must be positive");
  train.validate(decoder.batch_norm);
  synth.validate();
  if (n_per_intent < 1) throw ConfigError("synth.n_per_intent must be positive");
  const double fsum = fractions.train + fractions.valid + fractions.eval;
  if (fractions.train < 0 || fractions.valid < 0 || fractions.eval < 0 || std::abs(fsum - 1.0) > 1e-9) {
    throw ConfigError("synth split fractions must be non-negative and sum to 1");
  }
  if (synth.sample_rate != dsp.sample_rate) {
    throw ConfigError("synth.sample_rate (" + std::to_string(synth.sample_rate) + ") differs from dsp.sample_rate (" +
                      std::to_string(dsp.sample_rate) + ")");
  }
  if (augment.copies < 1) throw ConfigError("augment.copies must be at least 1");
  if (augment.snr_lo > augment.snr_hi) throw ConfigError("augment: snr_lo must not exceed snr_hi");
  if (augment.n_rirs < 1 || augment.n_noises < 1) throw ConfigError("augment: pool sizes must be positive");
  if (!(augment.t60_lo > 0.0 && augment.t60_lo <= augment.t60_hi)) {
    throw ConfigError("augment: need 0 < t60_lo <= t60_hi");
  }
  if (augment.splits.empty()) throw ConfigError("augment.splits must name at least one split");
  text_model(3, task).validate();
  if (!(text.wer >= 0.0 && text.wer <= 1.0)) throw ConfigError("text.wer must be in [0, 1]");
  if (threads < 1) throw ConfigError("run.threads must be at least 1");
}

namespace {

template <typename N>
N parse_integer(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": '" + v + "' is not a valid integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": '" + v + "' is not a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::string fmt_real(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

struct Field {
  std::string section, key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

class Fields {
 public:
  std::vector<Field> all;

  template <typename N>
    requires std::is_integral_v<N>
  void integer(const char* sec, const char* key, N& ref) {
    const std::string name = std::string(sec) + "." + key;
    all.push_back({sec, key, [&ref, name](const std::string& v) { ref = parse_integer<N>(name, v); },
                   [&ref] { return std::to_string(ref); }});
  }
  void real(const char* sec, const char* key, double& ref) {
    const std::string name = std::string(sec) + "." + key;
    all.push_back({sec, key, [&ref, name](const std::string& v) { ref = parse_real(name, v); },
                   [&ref] { return fmt_real(ref); }});
  }
  void boolean(const char* sec, const char* key, bool& ref) {
    const std::string name = std::string(sec) + "." + key;
    all.push_back({sec, key, [&ref, name](const std::string& v) { ref = parse_bool(name, v); },
                   [&ref] { return std::string(ref ? "true" : "false"); }});
  }
  void custom(const char* sec, const char* key, std::function<void(const std::string&)> set,
              std::function<std::string()> get) {
    all.push_back({sec, key, std::move(set), std::move(get)});
  }
};

Fields bind(RunConfig& c) {
  Fields f;
  f.integer("dsp", "sample_rate", c.dsp.sample_rate);
  f.real("dsp", "frame_length", c.dsp.frame_length);
  f.real("dsp", "frame_hop", c.dsp.frame_hop);
  f.integer("dsp", "fft_size", c.dsp.fft_size);
  f.integer("dsp", "n_mels", c.dsp.n_mels);
  f.real("dsp", "fmin", c.dsp.fmin);
  f.real("dsp", "fmax", c.dsp.fmax);
  f.real("dsp", "log_floor", c.dsp.log_floor);

  f.integer("encoder", "n_layers", c.encoder.n_layers);
  f.integer("encoder", "hidden", c.encoder.hidden);
  f.integer("encoder", "stride", c.encoder.stride);

  f.integer("decoder", "ff_hidden", c.decoder.ff_hidden);
  f.boolean("decoder", "batch_norm", c.decoder.batch_norm);
  f.custom(
      "decoder", "pooling", [&c](const std::string& v) { c.decoder.pooling = nn::parse_pooling(v); },
      [&c] { return std::string(nn::to_string(c.decoder.pooling)); });
  f.real("decoder", "bn_momentum", c.bn.momentum);
  f.real("decoder", "bn_epsilon", c.bn.epsilon);

  f.custom(
      "train", "task", [&c](const std::string& v) { c.task = parse_task(v); },
      [&c] { return std::string(to_string(c.task)); });
  f.integer("train", "batch_size", c.train.batch_size);
  f.integer("train", "max_epochs", c.train.max_epochs);
  f.integer("train", "patience", c.train.patience);
  f.integer("train", "seed", c.train.seed);
  f.boolean("train", "bucketing", c.train.bucketing);
  f.real("train", "clip_norm", c.train.clip_norm);
  f.real("train", "lr", c.train.adam.lr);
  f.real("train", "beta1", c.train.adam.beta1);
  f.real("train", "beta2", c.train.adam.beta2);
  f.real("train", "epsilon", c.train.adam.epsilon);
  f.custom(
      "train", "precision",
      [&c](const std::string& v) {
        if (v == "f32") c.precision = nn::Precision::f32;
        else if (v == "f64") c.precision = nn::Precision::f64;
        else throw ConfigError("train.precision: '" + v + "' (expected f32 or f64)");
      },
      [&c] { return std::string(c.precision == nn::Precision::f32 ? "f32" : "f64"); });

  f.integer("augment", "copies", c.augment.copies);
  f.real("augment", "snr_lo", c.augment.snr_lo);
  f.real("augment", "snr_hi", c.augment.snr_hi);
  f.integer("augment", "seed", c.augment.seed);
  f.custom(
      "augment", "rir_dir", [&c](const std::string& v) { c.augment.rir_dir = v; },
      [&c] { return c.augment.rir_dir; });
  f.custom(
      "augment", "noise_dir", [&c](const std::string& v) { c.augment.noise_dir = v; },
      [&c] { return c.augment.noise_dir; });
  f.integer("augment", "n_rirs", c.augment.n_rirs);
  f.integer("augment", "n_noises", c.augment.n_noises);
  f.real("augment", "t60_lo", c.augment.t60_lo);
  f.real("augment", "t60_hi", c.augment.t60_hi);
  f.custom(
      "augment", "splits",
      [&c](const std::string& v) {
        c.augment.splits.clear();
        std::stringstream ss(v);
        for (std::string part; std::getline(ss, part, ',');) {
          const auto b = part.find_first_not_of(' '), e = part.find_last_not_of(' ');
          if (b == std::string::npos) continue;
          try {
            c.augment.splits.push_back(corpus::parse_split(part.substr(b, e - b + 1)));
          } catch (const FormatError& err) {
            throw ConfigError(std::string("augment.splits: ") + err.what());
          }
        }
      },
      [&c] {
        std::string s;
        for (auto sp : c.augment.splits) s += (s.empty() ? "" : ",") + std::string(corpus::to_string(sp));
        return s;
      });
  f.boolean("augment", "replace", c.augment.replace);

  f.integer("synth", "n_domains", c.synth.n_domains);
  f.integer("synth", "intents_per_domain", c.synth.intents_per_domain);
  f.integer("synth", "sample_rate", c.synth.sample_rate);
  f.real("synth", "min_seconds", c.synth.min_seconds);
  f.real("synth", "max_seconds", c.synth.max_seconds);
  f.real("synth", "filler_prob", c.synth.filler_prob);
  f.real("synth", "gain_jitter_db", c.synth.gain_jitter_db);
  f.real("synth", "pitch_jitter", c.synth.pitch_jitter);
  f.real("synth", "duration_jitter", c.synth.duration_jitter);
  f.real("synth", "dither", c.synth.dither);
  f.integer("synth", "seed", c.synth.seed);
  f.integer("synth", "n_per_intent", c.n_per_intent);
  f.real("synth", "train_fraction", c.fractions.train);
  f.real("synth", "valid_fraction", c.fractions.valid);
  f.real("synth", "eval_fraction", c.fractions.eval);

  f.integer("text", "embedding_dim", c.text.embedding_dim);
  f.integer("text", "hidden", c.text.hidden);
  f.integer("text", "n_layers", c.text.n_layers);
  f.integer("text", "min_count", c.text.min_count);
  f.custom(
      "text", "cell", [&c](const std::string& v) { c.text.cell = text::parse_cell(v); },
      [&c] { return std::string(c.text.cell == text::CellType::gru ? "gru" : "lstm"); });
  f.real("text", "wer", c.text.wer);

  f.integer("run", "threads", c.threads);
  f.integer("run", "seed", c.seed);
  return f;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  auto fields = bind(c);
  std::set<std::string> seen;
  // [run] first so later sections can derive from its seed.
  std::vector<std::pair<std::string, const pt::ptree*>> sections;
  for (const auto& [name, node] : tree) {
    if (node.empty()) throw ConfigError("config key '" + name + "' appears outside any section");
    if (name == "run") sections.insert(sections.begin(), {name, &node});
    else sections.emplace_back(name, &node);
  }
  for (const auto& [name, node] : sections) {
    bool known_section = false;
    for (const auto& fd : fields.all) known_section |= fd.section == name;
    if (!known_section) throw ConfigError("unknown config section [" + name + "]");
    for (const auto& [key, leaf] : *node) {
      auto it = std::find_if(fields.all.begin(), fields.all.end(),
                             [&](const Field& fd) { return fd.section == name && fd.key == key; });
      if (it == fields.all.end()) throw ConfigError("unknown config key '" + key + "' in [" + name + "]");
      it->set(leaf.get_value<std::string>());
      seen.insert(name + "." + key);
    }
  }
  if (!seen.contains("synth.seed")) c.synth.seed = derive_seed(c.seed, "synth");
  if (!seen.contains("train.seed")) c.train.seed = derive_seed(c.seed, "train");
  if (!seen.contains("augment.seed")) c.augment.seed = derive_seed(c.seed, "augment");
  c.encoder.input_dim = c.dsp.n_mels;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

void apply_environment(RunConfig& cfg) {
  if (const char* v = std::getenv("SLU_THREADS"); v && *v) {
    cfg.threads = parse_integer<std::size_t>("SLU_THREADS", v);
  }
}

std::string echo_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  auto fields = bind(copy);
  std::ostringstream os;
  std::string current;
  for (const auto& fd : fields.all) {
    if (fd.section != current) {
      os << (current.empty() ? "" : "\n") << '[' << fd.section << "]\n";
      current = fd.section;
    }
    os << fd.key << " = " << fd.get() << '\n';
  }
  return os.str();
}

std::size_t label_of(const corpus::Record& r, Task t) {
  const int v = t == Task::domain ? r.domain_label : r.intent_label;
  if (v < 0) throw ConfigError("record '" + r.id + "' has negative " + std::string(to_string(t)) + " label");
  return static_cast<std::size_t>(v);
}

template <typename T>
nn::Dataset<nd::Tensor<T>> speech_dataset(const corpus::Manifest& manifest, corpus::Split split, Task task,
                                          const dsp::DspConfig& cfg,
                                          const std::optional<std::filesystem::path>& feature_dir) {
  dsp::LogMelExtractor ex(cfg);
  nn::Dataset<nd::Tensor<T>> d;
  for (const auto* r : manifest.in_split(split)) {
    const auto audio = corpus::read_wav(manifest.audio_file(*r));
    if (audio.sample_rate != cfg.sample_rate) {
      throw FormatError(r->id + ": sample rate " + std::to_string(audio.sample_rate) + " but dsp.sample_rate is " +
                        std::to_string(cfg.sample_rate));
    }
    dsp::FeatureMatrix fm;
    if (feature_dir) {
      fm = dsp::read_feature_cache(*feature_dir / (r->id + ".feat"));
      if (fm.dim() != cfg.n_mels) {
        throw FormatError(r->id + ": cached features have " + std::to_string(fm.dim()) + " bins, config expects " +
                          std::to_string(cfg.n_mels));
      }
    } else {
      fm = ex(audio.samples, audio.sample_rate);
    }
    d.items.push_back(fm.frames.cast<T>());
    d.labels.push_back(label_of(*r, task));
    d.seconds.push_back(static_cast<double>(audio.samples.size()) / audio.sample_rate);
    d.ids.push_back(r->id);
  }
  return d;
}

template nn::Dataset<nd::Tensor<float>> speech_dataset(const corpus::Manifest&, corpus::Split, Task,
                                                       const dsp::DspConfig&,
                                                       const std::optional<std::filesystem::path>&);
template nn::Dataset<nd::Tensor<double>> speech_dataset(const corpus::Manifest&, corpus::Split, Task,
                                                        const dsp::DspConfig&,
                                                        const std::optional<std::filesystem::path>&);

nn::Dataset<std::vector<std::size_t>> text_dataset(const corpus::Manifest& manifest, corpus::Split split, Task task,
                                                   const text::Vocab& vocab, double wer, std::uint64_t seed) {
  nn::Dataset<std::vector<std::size_t>> d;
  for (const auto* r : manifest.in_split(split)) {
    auto words = text::tokenize(r->transcript);
    if (wer > 0.0) words = text::corrupt_words(words, vocab, wer, derive_seed(seed, r->id));
    std::vector<std::size_t> ids;
    for (const auto& w : words) ids.push_back(vocab.index_of(w));
    if (ids.empty()) ids.push_back(text::kUnk);
    const auto audio = corpus::read_wav(manifest.audio_file(*r));
    d.items.push_back(std::move(ids));
    d.labels.push_back(label_of(*r, task));
    d.seconds.push_back(static_cast<double>(audio.samples.size()) / audio.sample_rate);
    d.ids.push_back(r->id);
  }
  return d;
}

std::vector<std::string> transcripts(const corpus::Manifest& manifest, corpus::Split split) {
  std::vector<std::string> out;
  for (const auto* r : manifest.in_split(split)) out.push_back(r->transcript);
  return out;
}

std::size_t featurize_manifest(const corpus::Manifest& manifest, const dsp::DspConfig& cfg,
                               const std::filesystem::path& out_dir) {
  dsp::LogMelExtractor ex(cfg);
  std::filesystem::create_directories(out_dir);
  for (const auto& r : manifest.records) {
    const auto audio = corpus::read_wav(manifest.audio_file(r));
    if (audio.sample_rate != cfg.sample_rate) {
      throw FormatError(r.id + ": sample rate " + std::to_string(audio.sample_rate) + " but dsp.sample_rate is " +
                        std::to_string(cfg.sample_rate));
    }
    dsp::write_feature_cache(out_dir / (r.id + ".feat"), ex(audio.samples, audio.sample_rate));
  }
  return manifest.records.size();
}

augment::Pools resolve_pools(const RunConfig& cfg, const std::filesystem::path& pool_dir) {
  auto synthetic = [&] {
    return augment::write_synthetic_pools(pool_dir, cfg.augment.n_rirs, cfg.augment.n_noises, cfg.augment.t60_lo,
                                          cfg.augment.t60_hi, cfg.dsp.sample_rate,
                                          derive_seed(cfg.augment.seed, "pools"));
  };
  auto list = [](const std::string& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir)) throw ConfigError("augment: '" + dir + "' is not a directory");
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("augment: no .wav files in '" + dir + "'");
    return files;
  };
  augment::Pools p;
  if (cfg.augment.rir_dir.empty() || cfg.augment.noise_dir.empty()) p = synthetic();
  if (!cfg.augment.rir_dir.empty()) p.rirs = list(cfg.augment.rir_dir);
  if (!cfg.augment.noise_dir.empty()) p.noises = list(cfg.augment.noise_dir);
  return p;
}

}  // namespace slu::pipeline
