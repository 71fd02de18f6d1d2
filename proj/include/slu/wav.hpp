#pragma once

#include <filesystem>
#include <vector>

namespace slu::corpus {

/// Mono audio in [-1, 1).
struct Audio {
  std::vector<double> samples;
  int sample_rate = 16000;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// PCM 16-bit mono little-endian. Samples are clipped to the 16-bit range.
void write_wav(const std::filesystem::path& path, const Audio& audio);

/// Reads PCM 16-bit mono; samples scaled by 1/32768. Throws FormatError naming
/// the offending header field for anything else.
Audio read_wav(const std::filesystem::path& path);

/// Value a sample takes after a 16-bit write/read round trip.
double quantize_pcm16(double x);

}  // namespace slu::corpus
