#include "slu/train.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace slu::nn {

void TrainConfig::validate(bool batch_norm) const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (batch_norm && batch_size < 2) throw ConfigError("train.batch_size must be at least 2 with batch norm");
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be at least 1");
  if (patience < 1) throw ConfigError("train.patience must be at least 1");
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (clip_norm < 0.0) throw ConfigError("train.clip_norm must be non-negative");
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                                                   bool bucketing, std::mt19937_64& rng) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (bucketing) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lengths[a] < lengths[b]; });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  if (bucketing) std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::string format_epoch_log(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.4f\t%.3f", e.epoch, e.train_loss, e.valid_accuracy, e.wall_seconds);
  return buf;
}

std::string format_eval_report(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "accuracy=" << r.accuracy << '\n'
     << "n_utterances=" << r.n_utterances << '\n'
     << "n_classes=" << r.confusion.size() << '\n'
     << "audio_seconds=" << r.audio_seconds << '\n'
     << "inference_seconds=" << r.inference_seconds << '\n'
     << "rtf=" << r.rtf << '\n';
  return os.str();
}

void write_eval_report(const std::filesystem::path& prefix, const EvalReport& r) {
  const auto txt = std::filesystem::path(prefix.string() + ".txt");
  const auto csv = std::filesystem::path(prefix.string() + ".confusion.csv");
  std::ofstream os(txt);
  if (!os) throw IoError("cannot open " + txt.string() + " for writing");
  os << format_eval_report(r);
  std::ofstream cs(csv);
  if (!cs) throw IoError("cannot open " + csv.string() + " for writing");
  for (const auto& row : r.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) cs << (j ? "," : "") << row[j];
    cs << '\n';
  }
}

bool same_outcome(const EvalReport& a, const EvalReport& b) {
  return a.accuracy == b.accuracy && a.n_utterances == b.n_utterances && a.confusion == b.confusion &&
         a.audio_seconds == b.audio_seconds;
}

}  // namespace slu::nn
