#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace slu::corpus {

enum class Split { train, valid, eval };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

/// Provenance of an augmented copy.
struct AugmentInfo {
  std::string source_id;
  std::string rir_id;
  std::string noise_id;
  double snr_db = 0.0;

  bool operator==(const AugmentInfo&) const = default;
};

struct Record {
  std::string id;
  std::string audio_path;  // relative to the manifest directory unless absolute
  std::string transcript;
  int domain_label = 0;
  int intent_label = 0;
  Split split = Split::train;
  std::optional<AugmentInfo> augment;

  bool operator==(const Record&) const = default;
};

/// Ordered corpus records, stored as JSON Lines.
struct Manifest {
  std::vector<Record> records;
  std::filesystem::path base_dir;  // directory audio paths are relative to

  std::filesystem::path audio_file(const Record& r) const;
  std::vector<const Record*> in_split(Split s) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct LabelInventory {
  int n_domains = 5;
  int n_intents = 35;
};

/// Rejects duplicate ids, labels outside the inventory, and (when
/// check_files) audio paths that do not exist. The message lists every
/// problem found, one per line.
void validate_manifest(const Manifest& manifest, const LabelInventory& labels, bool check_files = true);

}  // namespace slu::corpus
