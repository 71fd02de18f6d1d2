#include "slu/textnlu.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "slu/gru.hpp"

namespace slu::text {

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : sentence) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab Vocab::build(std::span<const std::string> transcripts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : transcripts)
    for (auto& tok : tokenize(s)) ++counts[tok];
  if (counts.empty()) throw DegenerateInputError("vocabulary: no tokens in the transcripts");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw FormatError("vocabulary: empty token at index " + std::to_string(i + 2));
    if (!v.index_.emplace(tokens[i], i + 2).second) {
      throw FormatError("vocabulary: duplicate token '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

std::size_t Vocab::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t index) const {
  static const std::string pad = "<pad>", unk = "<unk>";
  if (index == kPad) return pad;
  if (index == kUnk) return unk;
  if (index >= size()) throw DimensionError("vocabulary index " + std::to_string(index) + " out of range");
  return tokens_[index - 2];
}

std::vector<std::size_t> Vocab::encode(std::string_view sentence) const {
  std::vector<std::size_t> ids;
  for (const auto& tok : tokenize(sentence)) ids.push_back(index_of(tok));
  return ids;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& t : tokens_) os << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(is, line);) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

CellType parse_cell(std::string_view s) {
  if (s == "gru") return CellType::gru;
  if (s == "lstm") return CellType::lstm;
  throw ConfigError("unknown text.cell '" + std::string(s) + "' (expected gru)");
}

void TextModelConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("text.vocab_size must cover at least one token");
  if (embedding_dim == 0) throw ConfigError("text.embedding_dim must be positive");
  if (hidden == 0) throw ConfigError("text.hidden must be positive");
  if (n_layers == 0) throw ConfigError("text.n_layers must be at least 1");
  if (n_classes < 2) throw ConfigError("text.n_classes must be at least 2");
  if (cell == CellType::lstm) throw ConfigError("text.cell = lstm is reserved; only gru is implemented");
}

namespace {

nn::EncoderConfig text_encoder(const TextModelConfig& c) { return {c.embedding_dim, c.n_layers, c.hidden, 1}; }

}  // namespace

template <typename T>
TextModel<T>::TextModel(TextModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto emb = nn::uniform_tensor<T>({cfg_.vocab_size, cfg_.embedding_dim}, 0.1, rng);
  std::fill(emb.row(kPad).begin(), emb.row(kPad).end(), T{0});
  params_.add("emb", std::move(emb));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::size_t in = l == 0 ? cfg_.embedding_dim : 2 * cfg_.hidden;
    nn::add_gru_direction(params_, nn::encoder_prefix(l, true), in, cfg_.hidden, rng);
    nn::add_gru_direction(params_, nn::encoder_prefix(l, false), in, cfg_.hidden, rng);
  }
  const double lim = 1.0 / std::sqrt(static_cast<double>(2 * cfg_.hidden));
  params_.add("cls.W", nn::uniform_tensor<T>({cfg_.n_classes, 2 * cfg_.hidden}, lim, rng));
  params_.add("cls.b", Tensor<T>({cfg_.n_classes}));
}

template <typename T>
Var<T> TextModel<T>::encode(nd::Tape<T>&, const nn::BoundParams<T>& bp, const Item& tokens) const {
  if (tokens.empty()) throw DegenerateInputError("text model: empty token sequence");
  for (auto id : tokens) {
    if (id >= cfg_.vocab_size) {
      throw DimensionError("text model: token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(cfg_.vocab_size));
    }
  }
  auto x = nd::gather_rows(bp["emb"], tokens);
  auto enc = nn::encoder_forward(x, text_encoder(cfg_), bp);
  return nn::last_step_readout(enc.fwd_last, enc.bwd_first);
}

template <typename T>
Var<T> TextModel<T>::logits(nd::Tape<T>& tape, const nn::BoundParams<T>& bp, std::span<const Item* const> items,
                            nn::Mode, bool) {
  if (items.empty()) throw DegenerateInputError("text model: empty batch");
  std::vector<Var<T>> rows;
  for (const Item* it : items) rows.push_back(encode(tape, bp, *it));
  auto h = rows.size() == 1 ? rows[0] : nd::concat_rows(std::span<const Var<T>>(rows));
  return nd::add(nd::matmul_nt(h, bp["cls.W"]), bp["cls.b"]);
}

template <typename T>
Tensor<T> TextModel<T>::posterior(const Item& tokens) {
  nd::Tape<T> tape;
  nn::BoundParams<T> bp(tape, params_, false);
  const Item* one[] = {&tokens};
  return nd::softmax_rows(logits(tape, bp, std::span<const Item* const>(one), nn::Mode::infer, false).value());
}

template class TextModel<float>;
template class TextModel<double>;

std::size_t count_params_text(const TextModelConfig& c) {
  std::size_t n = c.vocab_size * c.embedding_dim;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    n += 2 * nn::gru_direction_param_count(l == 0 ? c.embedding_dim : 2 * c.hidden, c.hidden);
  }
  return n + c.n_classes * 2 * c.hidden + c.n_classes;
}

std::vector<std::string> corrupt_words(std::span<const std::string> tokens, const Vocab& vocab, double target_wer,
                                       std::uint64_t seed, CorruptionMix mix) {
  if (!(target_wer >= 0.0 && target_wer <= 1.0)) {
    throw ConfigError("corruption rate " + std::to_string(target_wer) + " outside [0, 1]");
  }
  const double total = mix.sub + mix.del + mix.ins;
  if (mix.sub < 0 || mix.del < 0 || mix.ins < 0 || !(total > 0.0)) {
    throw ConfigError("corruption mix needs non-negative weights with a positive sum");
  }
  const double p_sub = target_wer * mix.sub / total;
  const double p_del = target_wer * mix.del / total;
  const auto& inventory = vocab.tokens();
  if (target_wer > 0.0 && inventory.size() < 2) {
    throw DegenerateInputError("corruption needs at least two vocabulary tokens");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, inventory.empty() ? 0 : inventory.size() - 1);
  auto other_than = [&](const std::string& w) {
    for (;;) {
      const auto& c = inventory[pick(rng)];
      if (c != w) return c;
    }
  };
  std::vector<std::string> out;
  for (const auto& w : tokens) {
    const double r = u(rng);
    if (r < p_sub) {
      out.push_back(other_than(w));
    } else if (r < p_sub + p_del) {
      continue;
    } else {
      out.push_back(w);
      if (r < target_wer) out.push_back(inventory[pick(rng)]);
    }
  }
  return out;
}

std::size_t edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
    }
    prev.swap(cur);
  }
  return prev[hyp.size()];
}

template <typename T>
nn::Checkpoint to_checkpoint(const TextModel<T>& model, const Vocab& vocab) {
  const auto& c = model.config();
  nn::Checkpoint ckpt;
  ckpt.meta["kind"] = "text";
  ckpt.meta["text"] = {{"vocab_size", c.vocab_size}, {"embedding_dim", c.embedding_dim}, {"hidden", c.hidden},
                       {"n_layers", c.n_layers},     {"n_classes", c.n_classes},         {"cell", "gru"}};
  ckpt.meta["vocab"] = vocab.tokens();
  nn::append_tensors(ckpt, model.params());
  return ckpt;
}

template <typename T>
LoadedText<T> text_model_from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", std::string{}) != "text") throw FormatError("checkpoint does not hold a text model");
  try {
    const auto& j = ckpt.meta.at("text");
    TextModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.cell = parse_cell(j.at("cell").get<std::string>());
    LoadedText<T> out{TextModel<T>(c, 0), Vocab::from_tokens(ckpt.meta.at("vocab").get<std::vector<std::string>>())};
    if (out.vocab.size() != c.vocab_size) {
      throw FormatError("checkpoint vocabulary has " + std::to_string(out.vocab.size()) + " entries, model expects " +
                        std::to_string(c.vocab_size));
    }
    nn::restore_tensors(ckpt, out.model.params());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint meta incomplete: ") + e.what());
  }
}

template nn::Checkpoint to_checkpoint(const TextModel<float>&, const Vocab&);
template nn::Checkpoint to_checkpoint(const TextModel<double>&, const Vocab&);
template LoadedText<float> text_model_from_checkpoint(const nn::Checkpoint&);
template LoadedText<double> text_model_from_checkpoint(const nn::Checkpoint&);

}  // namespace slu::text
