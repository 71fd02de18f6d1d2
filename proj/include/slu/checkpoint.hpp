#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "slu/model.hpp"
#include "slu/tensor.hpp"

namespace slu::nn {

enum class Precision : std::uint8_t { f32 = 4, f64 = 8 };

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

struct CheckpointTensor {
  std::string name;
  Precision precision = Precision::f32;
  Tensor<double> value;  // widened in memory; narrowed on write for f32
};

// On disk: "SLUCKPT1", u32 meta length, meta JSON (UTF-8), u32 entry count,
// per entry {u32 name length, name, u32 rank, u64 extents[rank], u8 precision
// tag (4|8)}, then each payload in header order, little-endian.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
  /// Sum of extents products over entries whose name starts with prefix.
  std::size_t scalar_count(const std::string& prefix = "") const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
void append_tensors(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix = "") {
  for (const auto& [name, t] : params) ckpt.tensors.push_back({prefix + name, precision_of<T>(), t.template cast<double>()});
}

/// Copies entries named prefix + <param name> into params; shapes must match.
template <typename T>
void restore_tensors(const Checkpoint& ckpt, ParamSet<T>& params, const std::string& prefix = "") {
  for (auto& [name, t] : params) {
    const auto* e = ckpt.find(prefix + name);
    if (!e) throw FormatError("checkpoint lacks tensor '" + prefix + name + "'");
    if (e->value.shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + prefix + name + "' has shape " + nd::shape_str(e->value.shape()) +
                        ", model expects " + nd::shape_str(t.shape()));
    }
    t = e->value.template cast<T>();
  }
}

nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const DecoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

/// Parameters plus batch-norm running statistics; meta records the kind
/// ("speech") and both configs.
template <typename T>
Checkpoint to_checkpoint(const SpeechModel<T>& model);

template <typename T>
SpeechModel<T> speech_model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace slu::nn
