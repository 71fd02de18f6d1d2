#include "slu/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "slu/binary_io.hpp"
#include "slu/error.hpp"

namespace slu::corpus {

namespace {

std::int16_t to_pcm16(double x) {
  const double scaled = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace

double quantize_pcm16(double x) { return to_pcm16(x) / 32768.0; }

void write_wav(const std::filesystem::path& path, const Audio& audio) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  os.write("RIFF", 4);
  io::write_le<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::write_le<std::uint32_t>(os, 16);
  io::write_le<std::uint16_t>(os, 1);  // PCM
  io::write_le<std::uint16_t>(os, 1);  // mono
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(audio.sample_rate));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  io::write_le<std::uint16_t>(os, 2);
  io::write_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  io::write_le<std::uint32_t>(os, data_bytes);
  for (double s : audio.samples) io::write_le<std::int16_t>(os, to_pcm16(s));
  if (!os) throw IoError("failed writing " + path.string());
}

Audio read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string name = path.string();
  char tag[4];
  auto read_tag = [&](const char* what) {
    if (!is.read(tag, 4)) throw FormatError(name + ": truncated file while reading " + what);
  };
  read_tag("RIFF header");
  if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError(name + ": RIFF chunk id missing");
  io::read_le<std::uint32_t>(is, "RIFF size");
  read_tag("WAVE id");
  if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError(name + ": WAVE format id missing");

  bool have_fmt = false;
  Audio audio;
  while (true) {
    read_tag("chunk id");
    const auto size = io::read_le<std::uint32_t>(is, "chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(name + ": fmt chunk too short");
      const auto format = io::read_le<std::uint16_t>(is, "audio_format");
      const auto channels = io::read_le<std::uint16_t>(is, "num_channels");
      const auto rate = io::read_le<std::uint32_t>(is, "sample_rate");
      io::read_le<std::uint32_t>(is, "byte_rate");
      io::read_le<std::uint16_t>(is, "block_align");
      const auto bits = io::read_le<std::uint16_t>(is, "bits_per_sample");
      if (format != 1) throw FormatError(name + ": audio_format " + std::to_string(format) + " is not PCM (1)");
      if (channels != 1) throw FormatError(name + ": num_channels " + std::to_string(channels) + " is not mono");
      if (bits != 16) throw FormatError(name + ": bits_per_sample " + std::to_string(bits) + " is not 16");
      if (rate == 0) throw FormatError(name + ": sample_rate is 0");
      audio.sample_rate = static_cast<int>(rate);
      is.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(name + ": data chunk precedes fmt chunk");
      if (size % 2 != 0) throw FormatError(name + ": data chunk size " + std::to_string(size) + " is odd");
      audio.samples.resize(size / 2);
      for (auto& s : audio.samples) s = io::read_le<std::int16_t>(is, "data chunk") / 32768.0;
      return audio;
    } else {
      is.ignore(size + (size & 1));
      if (!is) throw FormatError(name + ": truncated file while skipping chunk");
    }
  }
}

}  // namespace slu::corpus
