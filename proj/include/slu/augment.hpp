#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slu/manifest.hpp"
#include "slu/wav.hpp"

namespace slu::augment {

struct AugmentSpec {
  std::vector<std::filesystem::path> rir_pool;
  std::vector<std::filesystem::path> noise_pool;
  double snr_lo = 5.0;
  double snr_hi = 25.0;
  int copies = 2;
  std::uint64_t seed = 1;
  bool save_components = false;  // also write <id>.clean.wav / <id>.noise.wav

  void validate() const;
};

/// Full linear convolution truncated to the signal length, then rescaled so
/// the output peak equals the input peak.
std::vector<double> convolve_rir(std::span<const double> signal, std::span<const double> rir);
corpus::Audio convolve_rir(const corpus::Audio& signal, const corpus::Audio& rir);

/// Mean squared amplitude.
double mean_power(std::span<const double> x);

struct NoiseMix {
  std::vector<double> mixed;
  std::vector<double> scaled_noise;  // g · noise segment actually added
  double gain = 0.0;
};

/// signal + g·noise with g chosen so that P_signal / P_added = 10^(snr/10).
/// A noise shorter than the signal is tiled cyclically starting at offset.
NoiseMix mix_noise_at_snr(std::span<const double> signal, std::span<const double> noise, double snr_db,
                          std::size_t offset = 0);

/// 10·log10(P_signal / P_noise).
double measure_snr_db(std::span<const double> signal, std::span<const double> noise);

/// Exponentially decaying white noise with a unit direct path; amplitude
/// falls 60 dB after t60 seconds. Length is t60 seconds.
corpus::Audio synth_rir(double t60, int sample_rate, std::uint64_t seed);

enum class NoiseColor { white, brown, hum };

corpus::Audio synth_noise(double seconds, int sample_rate, NoiseColor color, std::uint64_t seed);

/// Writes n_rirs synthetic RIRs (T60 uniform in [t60_lo, t60_hi]) and n_noises
/// noise files under dir/rir and dir/noise; returns the two pools.
struct Pools {
  std::vector<std::filesystem::path> rirs;
  std::vector<std::filesystem::path> noises;
};
Pools write_synthetic_pools(const std::filesystem::path& dir, int n_rirs, int n_noises, double t60_lo,
                            double t60_hi, int sample_rate, std::uint64_t seed);

struct Distorted {
  std::vector<double> mixed;
  std::vector<double> clean;  // reverberant signal as mixed in
  std::vector<double> noise;  // scaled noise as mixed in
};

/// Reverberate, then add noise at the target SNR. If the mixture would clip,
/// all three outputs are scaled by the same factor (SNR unchanged).
Distorted distort(std::span<const double> clean, std::span<const double> rir, std::span<const double> noise,
                  double snr_db, std::size_t noise_offset);

struct AugmentReport {
  corpus::Manifest manifest;
  std::vector<std::string> errors;  // one per record that could not be processed
};

/// Emits `copies` distorted versions of every record whose split is listed,
/// each with an independently sampled (rir, noise, snr). Output ids are
/// <source>-aug<k>; audio goes to out_dir/audio/<split>/.
AugmentReport augment_corpus(const corpus::Manifest& manifest, const AugmentSpec& spec,
                             const std::filesystem::path& out_dir,
                             std::span<const corpus::Split> splits);

}  // namespace slu::augment
