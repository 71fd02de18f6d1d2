#include "slu/checkpoint.hpp"

#include <fstream>

#include "slu/binary_io.hpp"
#include "slu/error.hpp"

namespace slu::nn {

namespace {
constexpr char kCkptMagic[9] = "SLUCKPT1";
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::size_t Checkpoint::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& t : tensors) {
    if (t.name.starts_with(prefix)) n += nd::shape_size(t.value.shape());
  }
  return n;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kCkptMagic, 8);
  const std::string meta = ckpt.meta.dump();
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) io::write_le<std::uint64_t>(os, e);
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.precision));
  }
  for (const auto& t : ckpt.tensors) {
    for (double v : t.value.values()) {
      if (t.precision == Precision::f32) {
        io::write_le<float>(os, static_cast<float>(v));
      } else {
        io::write_le<double>(os, v);
      }
    }
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  io::expect_magic(is, kCkptMagic, path.string());
  Checkpoint ckpt;
  const auto meta_len = io::read_le<std::uint32_t>(is, "meta length");
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), meta_len)) throw FormatError(path.string() + ": truncated meta block");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": meta block is not JSON: " + e.what());
  }
  const auto count = io::read_le<std::uint32_t>(is, "entry count");
  std::vector<nd::Shape> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = io::read_le<std::uint32_t>(is, "tensor name length");
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw FormatError(path.string() + ": truncated tensor name");
    const auto rank = io::read_le<std::uint32_t>(is, "tensor rank");
    if (rank == 0 || rank > 8) throw FormatError(path.string() + ": tensor '" + t.name + "' has bad rank");
    nd::Shape shape(rank);
    for (auto& e : shape) e = io::read_le<std::uint64_t>(is, "tensor extent");
    const auto tag = io::read_le<std::uint8_t>(is, "precision tag");
    if (tag != 4 && tag != 8) {
      throw FormatError(path.string() + ": tensor '" + t.name + "' has precision tag " + std::to_string(tag));
    }
    t.precision = static_cast<Precision>(tag);
    shapes.push_back(std::move(shape));
    ckpt.tensors.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    auto& t = ckpt.tensors[i];
    t.value = Tensor<double>(shapes[i]);
    for (auto& v : t.value.values()) {
      v = t.precision == Precision::f32 ? static_cast<double>(io::read_le<float>(is, "tensor payload"))
                                        : io::read_le<double>(is, "tensor payload");
    }
  }
  return ckpt;
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"input_dim", c.input_dim}, {"n_layers", c.n_layers}, {"hidden", c.hidden}, {"stride", c.stride}};
}

nlohmann::json to_json(const DecoderConfig& c) {
  return {{"ff_hidden", c.ff_hidden},
          {"n_classes", c.n_classes},
          {"batch_norm", c.batch_norm},
          {"pooling", std::string(to_string(c.pooling))}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  return c;
}

DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.ff_hidden = j.at("ff_hidden").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.batch_norm = j.at("batch_norm").get<bool>();
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  return c;
}

template <typename T>
Checkpoint to_checkpoint(const SpeechModel<T>& model) {
  Checkpoint ckpt;
  const auto& bn = model.batch_norm_state();
  ckpt.meta["kind"] = "speech";
  ckpt.meta["encoder"] = to_json(model.encoder_config());
  ckpt.meta["decoder"] = to_json(model.decoder_config());
  ckpt.meta["bn"] = {{"momentum", bn.cfg.momentum}, {"epsilon", bn.cfg.epsilon}, {"updates", bn.updates}};
  append_tensors(ckpt, model.params());
  if (model.decoder_config().batch_norm) {
    ckpt.tensors.push_back({"dec.bn.running_mean", precision_of<T>(), bn.running_mean.template cast<double>()});
    ckpt.tensors.push_back({"dec.bn.running_var", precision_of<T>(), bn.running_var.template cast<double>()});
  }
  return ckpt;
}

template <typename T>
SpeechModel<T> speech_model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", std::string{}) != "speech") {
    throw FormatError("checkpoint does not hold a speech model");
  }
  try {
    BatchNormConfig bnc;
    bnc.momentum = ckpt.meta.at("bn").at("momentum").get<double>();
    bnc.epsilon = ckpt.meta.at("bn").at("epsilon").get<double>();
    SpeechModel<T> model(encoder_config_from_json(ckpt.meta.at("encoder")),
                         decoder_config_from_json(ckpt.meta.at("decoder")), 0, bnc);
    restore_tensors(ckpt, model.params());
    auto& bn = model.batch_norm_state();
    bn.updates = ckpt.meta.at("bn").at("updates").get<std::size_t>();
    if (model.decoder_config().batch_norm) {
      const auto* mean = ckpt.find("dec.bn.running_mean");
      const auto* var = ckpt.find("dec.bn.running_var");
      if (!mean || !var) throw FormatError("checkpoint lacks batch-norm running statistics");
      bn.running_mean = mean->value.template cast<T>();
      bn.running_var = var->value.template cast<T>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint meta incomplete: ") + e.what());
  }
}

template Checkpoint to_checkpoint(const SpeechModel<float>&);
template Checkpoint to_checkpoint(const SpeechModel<double>&);
template SpeechModel<float> speech_model_from_checkpoint(const Checkpoint&);
template SpeechModel<double> speech_model_from_checkpoint(const Checkpoint&);

}  // namespace slu::nn
