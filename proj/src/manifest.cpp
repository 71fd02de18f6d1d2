#include "slu/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slu/error.hpp"

namespace slu::corpus {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::eval: return "eval";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "eval") return Split::eval;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

std::filesystem::path Manifest::audio_file(const Record& r) const {
  std::filesystem::path p(r.audio_path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<const Record*> Manifest::in_split(Split s) const {
  std::vector<const Record*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Record r;
      r.id = j.at("id").get<std::string>();
      r.audio_path = j.at("audio_path").get<std::string>();
      r.transcript = j.value("transcript", std::string{});
      r.domain_label = j.at("domain_label").get<int>();
      r.intent_label = j.at("intent_label").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      if (j.contains("source_id")) {
        r.augment = AugmentInfo{j.at("source_id").get<std::string>(), j.at("rir_id").get<std::string>(),
                                j.at("noise_id").get<std::string>(), j.at("snr_db").get<double>()};
      }
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : manifest.records) {
    json j;
    j["id"] = r.id;
    j["audio_path"] = r.audio_path;
    j["transcript"] = r.transcript;
    j["domain_label"] = r.domain_label;
    j["intent_label"] = r.intent_label;
    j["split"] = std::string(to_string(r.split));
    if (r.augment) {
      j["source_id"] = r.augment->source_id;
      j["rir_id"] = r.augment->rir_id;
      j["noise_id"] = r.augment->noise_id;
      j["snr_db"] = r.augment->snr_db;
    }
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void validate_manifest(const Manifest& manifest, const LabelInventory& labels, bool check_files) {
  std::ostringstream problems;
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (!seen.insert(r.id).second) problems << "duplicate id '" << r.id << "'\n";
    if (r.domain_label < 0 || r.domain_label >= labels.n_domains) {
      problems << "record '" << r.id << "': domain_label " << r.domain_label << " outside [0, "
               << labels.n_domains << ")\n";
    }
    if (r.intent_label < 0 || r.intent_label >= labels.n_intents) {
      problems << "record '" << r.id << "': intent_label " << r.intent_label << " outside [0, "
               << labels.n_intents << ")\n";
    }
    if (check_files && !std::filesystem::exists(manifest.audio_file(r))) {
      problems << "record '" << r.id << "': audio file " << manifest.audio_file(r).string()
               << " does not exist\n";
    }
  }
  const std::string msg = problems.str();
  if (!msg.empty()) throw FormatError("invalid manifest:\n" + msg.substr(0, msg.size() - 1));
}

}  // namespace slu::corpus
