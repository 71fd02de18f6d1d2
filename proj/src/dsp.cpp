#include "slu/dsp.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "slu/binary_io.hpp"
#include "slu/error.hpp"

namespace slu::dsp {

std::size_t DspConfig::frame_samples() const {
  return static_cast<std::size_t>(std::lround(frame_length * sample_rate));
}

std::size_t DspConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(frame_hop * sample_rate));
}

void DspConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("dsp.sample_rate must be positive");
  if (!(frame_hop > 0.0) || frame_hop > frame_length) {
    throw ConfigError("dsp: need 0 < frame_hop <= frame_length");
  }
  if (hop_samples() == 0) throw ConfigError("dsp.frame_hop is shorter than one sample");
  if (!is_power_of_two(fft_size)) {
    throw ConfigError("dsp.fft_size " + std::to_string(fft_size) + " is not a power of two");
  }
  if (fft_size < frame_samples()) {
    throw ConfigError("dsp.fft_size " + std::to_string(fft_size) + " is smaller than the frame (" +
                      std::to_string(frame_samples()) + " samples)");
  }
  if (n_mels < 2) throw ConfigError("dsp.n_mels must be at least 2");
  if (fmin < 0.0 || !(fmin < upper_hz()) || upper_hz() > sample_rate / 2.0) {
    throw ConfigError("dsp: need 0 <= fmin < fmax <= sample_rate/2");
  }
  if (!(log_floor > 0.0)) throw ConfigError("dsp.log_floor must be positive");
}

double hz_to_mel(double hz) {
  if (hz < 0.0) throw DimensionError("hz_to_mel: negative frequency " + std::to_string(hz));
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::span<std::complex<double>> x) {
  const std::size_t n = x.size();
  if (!is_power_of_two(n)) {
    throw DimensionError("fft: size " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  std::vector<std::complex<double>> twiddle(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle[k] = {std::cos(angle), std::sin(angle)};
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto u = x[start + k];
        const auto v = x[start + k + half] * twiddle[k * step];
        x[start + k] = u + v;
        x[start + k + half] = u - v;
      }
    }
  }
}

std::vector<std::complex<double>> compute_fft(std::span<const double> frame, std::size_t fft_size) {
  if (!is_power_of_two(fft_size)) {
    throw DimensionError("fft: size " + std::to_string(fft_size) + " is not a power of two");
  }
  if (frame.size() > fft_size) {
    throw DimensionError("fft: frame of " + std::to_string(frame.size()) +
                         " samples exceeds fft size " + std::to_string(fft_size));
  }
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  fft_inplace(buf);
  buf.resize(fft_size / 2 + 1);
  return buf;
}

std::vector<double> power_spectrum(std::span<const double> frame, std::size_t fft_size) {
  auto spec = compute_fft(frame, fft_size);
  std::vector<double> out(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) out[k] = std::norm(spec[k]);
  return out;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (length < 2) return w;
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(length - 1));
  }
  return w;
}

MelFilterbank build_mel_filterbank(const DspConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.upper_hz());
  MelFilterbank bank;
  bank.edges_hz.resize(cfg.n_mels + 2);
  for (std::size_t i = 0; i < bank.edges_hz.size(); ++i) {
    const double mel = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1);
    bank.edges_hz[i] = mel_to_hz(mel);
  }
  bank.weights = nd::Tensor<double>({cfg.n_mels, bins});
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.fft_size);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = bank.edges_hz[m], center = bank.edges_hz[m + 1], right = bank.edges_hz[m + 2];
    bank.centers_hz.push_back(center);
    bool support = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      bank.weights(m, k) = w;
      support = support || w > 0.0;
    }
    if (!support) {
      throw ConfigError("mel filter " + std::to_string(m) + " (center " + std::to_string(center) +
                        " Hz) covers no FFT bin; reduce n_mels or raise fft_size");
    }
  }
  return bank;
}

std::size_t frame_count(std::size_t n_samples, const DspConfig& cfg) {
  const std::size_t frame = cfg.frame_samples();
  if (n_samples < frame) return 0;
  return 1 + (n_samples - frame) / cfg.hop_samples();
}

LogMelExtractor::LogMelExtractor(DspConfig cfg)
    : cfg_(cfg), bank_(build_mel_filterbank(cfg_)), window_(hann_window(cfg_.frame_samples())) {}

FeatureMatrix LogMelExtractor::operator()(std::span<const double> samples, int sample_rate) const {
  if (sample_rate != cfg_.sample_rate) {
    throw FormatError("audio sample rate " + std::to_string(sample_rate) +
                      " Hz does not match configured " + std::to_string(cfg_.sample_rate) + " Hz");
  }
  const std::size_t frames = frame_count(samples.size(), cfg_);
  if (frames == 0) {
    throw DegenerateInputError("audio has " + std::to_string(samples.size()) +
                               " samples, shorter than one frame (" +
                               std::to_string(cfg_.frame_samples()) + ")");
  }
  const std::size_t flen = cfg_.frame_samples(), hop = cfg_.hop_samples();
  const std::size_t bins = cfg_.fft_size / 2 + 1;
  FeatureMatrix out;
  out.frame_rate = cfg_.frame_rate();
  out.frames = nd::Tensor<double>({frames, cfg_.n_mels});
  std::vector<std::complex<double>> buf(cfg_.fft_size);
  const double log_min = std::log(cfg_.log_floor);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < flen; ++i) buf[i] = samples[t * hop + i] * window_[i];
    fft_inplace(buf);
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      double e = 0.0;
      const auto w = bank_.weights.row(m);
      for (std::size_t k = 0; k < bins; ++k) {
        if (w[k] != 0.0) e += w[k] * std::norm(buf[k]);
      }
      out.frames(t, m) = e > cfg_.log_floor ? std::log(e) : log_min;
    }
  }
  return out;
}

FeatureMatrix extract_logmel(std::span<const double> samples, int sample_rate, const DspConfig& cfg) {
  return LogMelExtractor(cfg)(samples, sample_rate);
}

namespace {
constexpr char kFeatMagic[9] = "SLUFEAT1";
constexpr std::uint32_t kFloat32Tag = 4;
}  // namespace

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kFeatMagic, 8);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(features.num_frames()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(features.dim()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(std::lround(features.frame_rate)));
  io::write_le<std::uint32_t>(os, kFloat32Tag);
  for (double v : features.frames.values()) io::write_le<float>(os, static_cast<float>(v));
  if (!os) throw IoError("failed writing " + path.string());
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  io::expect_magic(is, kFeatMagic, path.string());
  const auto frames = io::read_le<std::uint32_t>(is, "frame count");
  const auto dim = io::read_le<std::uint32_t>(is, "feature dim");
  const auto rate = io::read_le<std::uint32_t>(is, "frame rate");
  const auto tag = io::read_le<std::uint32_t>(is, "precision tag");
  if (tag != kFloat32Tag) {
    throw FormatError(path.string() + ": unsupported precision tag " + std::to_string(tag));
  }
  if (frames == 0 || dim == 0) throw FormatError(path.string() + ": empty feature matrix");
  FeatureMatrix out;
  out.frame_rate = rate;
  out.frames = nd::Tensor<double>({frames, dim});
  for (auto& v : out.frames.values()) v = io::read_le<float>(is, "feature payload");
  return out;
}

}  // namespace slu::dsp
