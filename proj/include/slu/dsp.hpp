#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "slu/tensor.hpp"

namespace slu::dsp {

struct DspConfig {
  int sample_rate = 16000;
  double frame_length = 0.025;  // seconds
  double frame_hop = 0.010;     // seconds
  std::size_t fft_size = 512;
  std::size_t n_mels = 40;
  double fmin = 0.0;
  double fmax = -1.0;  // <= 0 means sample_rate / 2
  double log_floor = 1e-10;

  double upper_hz() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
  std::size_t frame_samples() const;
  std::size_t hop_samples() const;
  double frame_rate() const { return 1.0 / frame_hop; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Log-Mel features, one row per 10 ms frame (T×F).
struct FeatureMatrix {
  nd::Tensor<double> frames;
  double frame_rate = 100.0;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

/// HTK mel scale: 2595·log10(1 + f/700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

bool is_power_of_two(std::size_t n);

/// In-place iterative radix-2 FFT. Size must be a power of two.
void fft_inplace(std::span<std::complex<double>> x);

/// Spectrum of a real frame zero-padded to fft_size: fft_size/2 + 1 bins.
std::vector<std::complex<double>> compute_fft(std::span<const double> frame, std::size_t fft_size);

/// |X_k|² for each of the fft_size/2 + 1 bins.
std::vector<double> power_spectrum(std::span<const double> frame, std::size_t fft_size);

/// Symmetric Hann window.
std::vector<double> hann_window(std::size_t length);

struct MelFilterbank {
  nd::Tensor<double> weights;       // n_mels × (fft_size/2 + 1)
  std::vector<double> centers_hz;   // one per filter
  std::vector<double> edges_hz;     // n_mels + 2 points equally spaced in mel
};

MelFilterbank build_mel_filterbank(const DspConfig& cfg);

/// Number of frames produced for n samples (0 when shorter than one frame).
std::size_t frame_count(std::size_t n_samples, const DspConfig& cfg);

/// Precomputes window and filterbank; reusable and immutable after
/// construction, so one instance can serve many threads.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(DspConfig cfg);

  FeatureMatrix operator()(std::span<const double> samples, int sample_rate) const;

  const DspConfig& config() const { return cfg_; }
  const MelFilterbank& filterbank() const { return bank_; }

 private:
  DspConfig cfg_;
  MelFilterbank bank_;
  std::vector<double> window_;
};

FeatureMatrix extract_logmel(std::span<const double> samples, int sample_rate, const DspConfig& cfg);

// Feature cache: "SLUFEAT1", u32 frames, u32 dim, u32 frame rate (Hz),
// u32 precision tag (4 = float32), then frames·dim float32, row-major, LE.
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_cache(const std::filesystem::path& path);

}  // namespace slu::dsp
