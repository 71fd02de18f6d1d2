#include "slu/cli.hpp"

#include <cstdio>
#include <optional>

#include <CLI11.hpp>

#include "slu/pipeline.hpp"
#include "slu/saliency.hpp"
#include "slu/seed.hpp"
#include "slu/wav.hpp"

namespace slu::cli {

namespace fs = std::filesystem;
using pipeline::RunConfig;
using pipeline::Task;

namespace {

// Output already present and --force absent.
class ExistsError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string config, out, manifest, features, model, report, id, wav, task, kind = "speech", split = "eval";
  std::optional<std::size_t> target;
  std::optional<double> wer;
  bool force = false;
};

void guard_file(const fs::path& p, bool force) {
  if (!force && fs::exists(p)) throw ExistsError(p.string() + " exists (use --force to overwrite)");
}

void guard_dir(const fs::path& p, bool force) {
  if (!force && fs::is_directory(p) && !fs::is_empty(p)) {
    throw ExistsError(p.string() + " is not empty (use --force to overwrite)");
  }
}

RunConfig load_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? pipeline::parse_run_config("") : pipeline::load_run_config(o.config);
  pipeline::apply_environment(cfg);
  if (!o.task.empty()) cfg.task = pipeline::parse_task(o.task);
  cfg.validate();
  return cfg;
}

corpus::Manifest load_manifest(const Options& o, const RunConfig& cfg) {
  if (o.manifest.empty()) throw ConfigError("--manifest is required");
  auto m = corpus::read_manifest(o.manifest);
  corpus::validate_manifest(m, cfg.inventory());
  return m;
}

std::optional<fs::path> feature_dir(const Options& o) {
  if (o.features.empty()) return std::nullopt;
  return fs::path(o.features);
}

template <typename F>
decltype(auto) with_precision(nn::Precision p, F&& f) {
  if (p == nn::Precision::f32) return f(float{});
  return f(double{});
}

nn::Precision checkpoint_precision(const nn::Checkpoint& ckpt) {
  if (ckpt.tensors.empty()) throw FormatError("checkpoint holds no tensors");
  return ckpt.tensors.front().precision;
}

Task checkpoint_task(const nn::Checkpoint& ckpt, const RunConfig& cfg) {
  return ckpt.meta.contains("task") ? pipeline::parse_task(ckpt.meta["task"].get<std::string>()) : cfg.task;
}

void check_classes(std::size_t model_classes, const RunConfig& cfg, Task task) {
  const std::size_t want = cfg.n_classes(task);
  if (model_classes != want) {
    throw ConfigError("class count mismatch: model has " + std::to_string(model_classes) + " classes, the " +
                      std::string(pipeline::to_string(task)) + " inventory has " + std::to_string(want));
  }
}

template <typename Model, typename Item>
void fit(Model& model, const nn::Dataset<Item>& train, const nn::Dataset<Item>& valid, const RunConfig& cfg,
         std::ostream& out) {
  out << "epoch\ttrain_loss\tvalid_acc\tseconds\n";
  const auto r = nn::train_model(model, train, valid, cfg.train,
                                 [&](const nn::EpochLog& e) { out << nn::format_epoch_log(e) << '\n' << std::flush; });
  char buf[96];
  std::snprintf(buf, sizeof buf, "best_valid_accuracy=%.4f best_epoch=%zu", r.best_valid_accuracy, r.best_epoch);
  out << buf << '\n';
}

void cmd_synth(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  guard_file(fs::path(o.out) / "manifest.jsonl", o.force);
  const auto m = corpus::build_synthetic_corpus(cfg.synth, cfg.n_per_intent, cfg.fractions, o.out);
  out << "synth: " << m.records.size() << " utterances -> " << (fs::path(o.out) / "manifest.jsonl").string() << '\n';
}

void cmd_featurize(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  const auto m = load_manifest(o, cfg);
  guard_dir(o.out, o.force);
  const auto n = pipeline::featurize_manifest(m, cfg.dsp, o.out);
  out << "featurize: " << n << " feature files -> " << o.out << '\n';
}

int cmd_augment(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  const auto m = load_manifest(o, cfg);
  const fs::path dir(o.out);
  guard_file(dir / "manifest.jsonl", o.force);
  const auto pools = pipeline::resolve_pools(cfg, dir / "pools");
  augment::AugmentSpec spec;
  spec.rir_pool = pools.rirs;
  spec.noise_pool = pools.noises;
  spec.snr_lo = cfg.augment.snr_lo;
  spec.snr_hi = cfg.augment.snr_hi;
  spec.copies = cfg.augment.copies;
  spec.seed = cfg.augment.seed;
  const auto report = augment::augment_corpus(m, spec, dir, cfg.augment.splits);

  corpus::Manifest merged;
  merged.base_dir = dir;
  const auto& splits = cfg.augment.splits;
  for (const auto& r : m.records) {
    if (cfg.augment.replace && std::find(splits.begin(), splits.end(), r.split) != splits.end()) continue;
    auto copy = r;
    copy.audio_path = fs::absolute(m.audio_file(r)).string();
    merged.records.push_back(std::move(copy));
  }
  for (const auto& r : report.manifest.records) merged.records.push_back(r);
  corpus::write_manifest(dir / "manifest.jsonl", merged);
  out << "augment: " << report.manifest.records.size() << " distorted utterances, " << merged.records.size()
      << " records -> " << (dir / "manifest.jsonl").string() << '\n';
  if (!report.errors.empty()) {
    for (const auto& e : report.errors) err << "warning: " << e << '\n';
    err << "error: augment: " << report.errors.size() << " records failed\n";
    return 1;
  }
  return 0;
}

void cmd_train(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  const auto m = load_manifest(o, cfg);
  guard_file(o.out, o.force);
  const Task task = cfg.task;
  nn::Checkpoint ckpt;
  if (o.kind == "speech") {
    ckpt = with_precision(cfg.precision, [&](auto tag) {
      using T = decltype(tag);
      const auto train = pipeline::speech_dataset<T>(m, corpus::Split::train, task, cfg.dsp, feature_dir(o));
      const auto valid = pipeline::speech_dataset<T>(m, corpus::Split::valid, task, cfg.dsp, feature_dir(o));
      nn::SpeechModel<T> model(cfg.encoder_for_features(), cfg.decoder_for(task), derive_seed(cfg.train.seed, "init"),
                               cfg.bn);
      fit(model, train, valid, cfg, out);
      return nn::to_checkpoint(model);
    });
  } else if (o.kind == "text") {
    const auto vocab = text::Vocab::build(pipeline::transcripts(m, corpus::Split::train), cfg.text.min_count);
    ckpt = with_precision(cfg.precision, [&](auto tag) {
      using T = decltype(tag);
      const auto train = pipeline::text_dataset(m, corpus::Split::train, task, vocab);
      const auto valid = pipeline::text_dataset(m, corpus::Split::valid, task, vocab);
      text::TextModel<T> model(cfg.text_model(vocab.size(), task), derive_seed(cfg.train.seed, "init"));
      fit(model, train, valid, cfg, out);
      return text::to_checkpoint(model, vocab);
    });
  } else {
    throw ConfigError("--kind must be speech or text, got '" + o.kind + "'");
  }
  ckpt.meta["task"] = std::string(pipeline::to_string(task));
  nn::save_checkpoint(o.out, ckpt);
  out << "saved " << o.out << '\n';
}

void cmd_eval(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  if (o.model.empty()) throw ConfigError("--model is required");
  const auto ckpt = nn::load_checkpoint(o.model);
  const Task task = o.task.empty() ? checkpoint_task(ckpt, cfg) : cfg.task;
  const auto m = load_manifest(o, cfg);
  const auto split = [&] {
    try {
      return corpus::parse_split(o.split);
    } catch (const FormatError& e) {
      throw ConfigError(std::string("--split: ") + e.what());
    }
  }();
  if (!o.report.empty()) guard_file(o.report + ".txt", o.force);
  const std::string kind = ckpt.meta.value("kind", std::string{});
  const auto report = with_precision(checkpoint_precision(ckpt), [&](auto tag) {
    using T = decltype(tag);
    if (kind == "text") {
      auto loaded = text::text_model_from_checkpoint<T>(ckpt);
      check_classes(loaded.model.n_classes(), cfg, task);
      const double wer = o.wer.value_or(cfg.text.wer);
      const auto data =
          pipeline::text_dataset(m, split, task, loaded.vocab, wer, derive_seed(cfg.seed, "recognized"));
      return nn::evaluate(loaded.model, data);
    }
    auto model = nn::speech_model_from_checkpoint<T>(ckpt);
    check_classes(model.n_classes(), cfg, task);
    const auto data = pipeline::speech_dataset<T>(m, split, task, cfg.dsp, feature_dir(o));
    return nn::evaluate(model, data);
  });
  if (!o.report.empty()) nn::write_eval_report(o.report, report);
  char buf[96];
  std::snprintf(buf, sizeof buf, "accuracy=%.3f rtf=%.4f", report.accuracy, report.rtf);
  out << buf << '\n';
}

void cmd_saliency(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  if (o.model.empty() || o.out.empty()) throw ConfigError("--model and --out are required");
  const auto ckpt = nn::load_checkpoint(o.model);
  if (ckpt.meta.value("kind", std::string{}) != "speech") throw ConfigError("saliency needs a speech model");
  corpus::Audio audio;
  if (!o.wav.empty()) {
    audio = corpus::read_wav(o.wav);
  } else {
    if (o.id.empty()) throw ConfigError("give --wav, or --manifest with --id");
    const auto m = load_manifest(o, cfg);
    auto it = std::find_if(m.records.begin(), m.records.end(), [&](const auto& r) { return r.id == o.id; });
    if (it == m.records.end()) throw ConfigError("no record '" + o.id + "' in " + o.manifest);
    audio = corpus::read_wav(m.audio_file(*it));
  }
  if (audio.sample_rate != cfg.dsp.sample_rate) {
    throw FormatError("audio sample rate " + std::to_string(audio.sample_rate) + " but dsp.sample_rate is " +
                      std::to_string(cfg.dsp.sample_rate));
  }
  for (const char* ext : {".features.pgm", ".saliency.pgm", ".csv"}) guard_file(o.out + ext, o.force);
  const auto fm = dsp::extract_logmel(audio.samples, audio.sample_rate, cfg.dsp);
  const auto map = with_precision(checkpoint_precision(ckpt), [&](auto tag) {
    using T = decltype(tag);
    auto model = nn::speech_model_from_checkpoint<T>(ckpt);
    return saliency::make_saliency(model, fm.frames.cast<T>(), o.target);
  });
  saliency::render_saliency(o.out, map, fm.frames);
  saliency::write_saliency_csv(o.out + ".csv", map);
  const auto top = std::max_element(map.frame_scores.begin(), map.frame_scores.end()) - map.frame_scores.begin();
  out << "class=" << map.target_class << " frames=" << map.frame_scores.size() << " top_frame=" << top << '\n';
}

void cmd_info(const Options& o, std::ostream& out) {
  const auto cfg = load_config(o);
  out << pipeline::echo_config(cfg) << '\n';
  for (Task t : {Task::domain, Task::intent}) {
    if (cfg.n_classes(t) < 2) continue;
    nn::SpeechModel<float> m(cfg.encoder_for_features(), cfg.decoder_for(t), 0, cfg.bn);
    out << "params.speech." << pipeline::to_string(t) << '=' << m.count_params() << '\n';
  }
  const std::size_t vocab = corpus::word_inventory(cfg.synth).size() + 2;
  out << "params.text." << pipeline::to_string(cfg.task) << '='
      << text::count_params_text(cfg.text_model(vocab, cfg.task)) << " (vocabulary " << vocab << ")\n";
  if (!o.model.empty()) {
    const auto ckpt = nn::load_checkpoint(o.model);
    const std::string kind = ckpt.meta.value("kind", std::string{});
    std::size_t params = 0, classes = 0;
    if (kind == "text") {
      const auto loaded = text::text_model_from_checkpoint<double>(ckpt);
      params = loaded.model.count_params();
      classes = loaded.model.n_classes();
    } else {
      const auto model = nn::speech_model_from_checkpoint<double>(ckpt);
      params = model.count_params();
      classes = model.n_classes();
    }
    out << "model.kind=" << kind << "\nmodel.task=" << pipeline::to_string(checkpoint_task(ckpt, cfg))
        << "\nmodel.classes=" << classes << "\nmodel.params=" << params << '\n';
  }
}

std::string category(const std::exception& e) {
  if (dynamic_cast<const ExistsError*>(&e)) return "exists";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const DegenerateInputError*>(&e)) return "degenerate";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  return "runtime";
}

// Single-line diagnostics: multi-line detail is folded with "; ".
std::string one_line(std::string s) {
  for (auto pos = s.find('\n'); pos != std::string::npos; pos = s.find('\n', pos)) s.replace(pos, 1, "; ");
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spoken language understanding toolkit", "slu"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_flag("-f,--force", o.force, "overwrite existing outputs");
  };
  auto* synth = app.add_subcommand("synth", "generate the synthetic tonal-command corpus");
  common(synth);
  synth->add_option("-o,--out", o.out, "output directory")->required();

  auto* featurize = app.add_subcommand("featurize", "cache log-Mel features for every record");
  common(featurize);
  featurize->add_option("-m,--manifest", o.manifest, "manifest (JSON lines)")->required();
  featurize->add_option("-o,--out", o.out, "feature directory")->required();

  auto* augment = app.add_subcommand("augment", "reverberate and add noise");
  common(augment);
  augment->add_option("-m,--manifest", o.manifest, "source manifest")->required();
  augment->add_option("-o,--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a speech or text model");
  common(train);
  train->add_option("-m,--manifest", o.manifest, "training manifest")->required();
  train->add_option("-o,--out", o.out, "checkpoint path")->required();
  train->add_option("--features", o.features, "feature cache directory");
  train->add_option("--task", o.task, "domain or intent");
  train->add_option("--kind", o.kind, "speech or text");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval);
  eval->add_option("-m,--manifest", o.manifest, "manifest to score")->required();
  eval->add_option("--model", o.model, "checkpoint")->required();
  eval->add_option("--features", o.features, "feature cache directory");
  eval->add_option("--split", o.split, "train, valid or eval");
  eval->add_option("--task", o.task, "override the checkpoint's task");
  eval->add_option("--report", o.report, "write <prefix>.txt and <prefix>.confusion.csv");
  eval->add_option("--wer", o.wer, "word corruption rate for text models");

  auto* sal = app.add_subcommand("saliency", "input-gradient saliency of one utterance");
  common(sal);
  sal->add_option("--model", o.model, "speech checkpoint")->required();
  sal->add_option("-o,--out", o.out, "output prefix")->required();
  sal->add_option("-m,--manifest", o.manifest, "manifest holding --id");
  sal->add_option("--id", o.id, "record id in the manifest");
  sal->add_option("--wav", o.wav, "audio file");
  sal->add_option("--class", o.target, "class to explain (default: predicted)");

  auto* info = app.add_subcommand("info", "echo the resolved config and parameter counts");
  common(info);
  info->add_option("--model", o.model, "checkpoint to describe");

  std::vector<const char*> argv = {"slu"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << '\n' << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) cmd_synth(o, out);
    else if (featurize->parsed()) cmd_featurize(o, out);
    else if (augment->parsed()) return cmd_augment(o, out, err);
    else if (train->parsed()) cmd_train(o, out);
    else if (eval->parsed()) cmd_eval(o, out);
    else if (sal->parsed()) cmd_saliency(o, out);
    else if (info->parsed()) cmd_info(o, out);
    return 0;
  } catch (const std::exception& e) {
    const auto cat = category(e);
    err << "error: " << cat << ": " << one_line(e.what()) << '\n';
    return cat == "config" || cat == "exists" ? 3 : 1;
  }
}

}  // namespace slu::cli
