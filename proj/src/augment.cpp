#include "slu/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <random>

#include "slu/dsp.hpp"
#include "slu/error.hpp"
#include "slu/seed.hpp"

namespace slu::augment {

namespace {

double peak_abs(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

std::vector<double> convolve_direct(std::span<const double> x, std::span<const double> h) {
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t kmax = std::min(i + 1, h.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < kmax; ++k) acc += h[k] * x[i - k];
    y[i] = acc;
  }
  return y;
}

std::vector<double> convolve_fft(std::span<const double> x, std::span<const double> h) {
  std::size_t size = 1;
  while (size < x.size() + h.size() - 1) size <<= 1;
  std::vector<std::complex<double>> a(size), b(size);
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  for (std::size_t i = 0; i < h.size(); ++i) b[i] = h[i];
  dsp::fft_inplace(a);
  dsp::fft_inplace(b);
  // Inverse via conjugation: ifft(z) = conj(fft(conj(z))) / n.
  for (std::size_t i = 0; i < size; ++i) a[i] = std::conj(a[i] * b[i]);
  dsp::fft_inplace(a);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i].real() / static_cast<double>(size);
  return y;
}

}  // namespace

void AugmentSpec::validate() const {
  if (snr_lo > snr_hi) throw ConfigError("augment: snr_lo must not exceed snr_hi");
  if (copies < 1) throw ConfigError("augment.copies must be at least 1");
  if (rir_pool.empty()) throw ConfigError("augment: RIR pool is empty");
  if (noise_pool.empty()) throw ConfigError("augment: noise pool is empty");
}

std::vector<double> convolve_rir(std::span<const double> signal, std::span<const double> rir) {
  if (signal.empty() || rir.empty()) throw DegenerateInputError("convolve_rir: empty signal or RIR");
  auto y = (signal.size() * rir.size() <= 4'000'000) ? convolve_direct(signal, rir) : convolve_fft(signal, rir);
  const double in_peak = peak_abs(signal);
  const double out_peak = peak_abs(y);
  if (out_peak > 0.0 && in_peak != out_peak) {
    const double scale = in_peak / out_peak;
    for (auto& v : y) v *= scale;
  }
  return y;
}

corpus::Audio convolve_rir(const corpus::Audio& signal, const corpus::Audio& rir) {
  if (signal.sample_rate != rir.sample_rate) {
    throw FormatError("convolve_rir: sample rate " + std::to_string(signal.sample_rate) +
                      " Hz vs RIR " + std::to_string(rir.sample_rate) + " Hz");
  }
  return {convolve_rir(signal.samples, rir.samples), signal.sample_rate};
}

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

NoiseMix mix_noise_at_snr(std::span<const double> signal, std::span<const double> noise, double snr_db,
                          std::size_t offset) {
  if (signal.empty() || noise.empty()) throw DegenerateInputError("mix_noise_at_snr: empty input");
  std::vector<double> segment(signal.size());
  for (std::size_t i = 0; i < segment.size(); ++i) segment[i] = noise[(offset + i) % noise.size()];
  const double ps = mean_power(signal);
  const double pn = mean_power(segment);
  if (pn == 0.0) throw DegenerateInputError("mix_noise_at_snr: noise has zero power");
  if (ps == 0.0) throw DegenerateInputError("mix_noise_at_snr: signal has zero power, SNR undefined");
  NoiseMix out;
  out.gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  out.scaled_noise.resize(signal.size());
  out.mixed.resize(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) {
    out.scaled_noise[i] = out.gain * segment[i];
    out.mixed[i] = signal[i] + out.scaled_noise[i];
  }
  return out;
}

double measure_snr_db(std::span<const double> signal, std::span<const double> noise) {
  return 10.0 * std::log10(mean_power(signal) / mean_power(noise));
}

corpus::Audio synth_rir(double t60, int sample_rate, std::uint64_t seed) {
  if (!(t60 > 0.0)) throw ConfigError("synth_rir: t60 must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto len = static_cast<std::size_t>(std::max<long>(1, std::lround(t60 * sample_rate)));
  corpus::Audio rir;
  rir.sample_rate = sample_rate;
  rir.samples.resize(len);
  rir.samples[0] = 1.0;
  for (std::size_t i = 1; i < len; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    rir.samples[i] = 0.3 * n(rng) * std::pow(10.0, -3.0 * t / t60);
  }
  // Keep the direct path as the peak so a 16-bit round trip does not clip.
  const double peak = peak_abs(rir.samples);
  for (auto& v : rir.samples) v *= 0.9 / peak;
  return rir;
}

corpus::Audio synth_noise(double seconds, int sample_rate, NoiseColor color, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  corpus::Audio out;
  out.sample_rate = sample_rate;
  out.samples.resize(static_cast<std::size_t>(std::max<long>(1, std::lround(seconds * sample_rate))));
  double state = 0.0;
  const double hum_hz = 100.0 + 200.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double w = n(rng);
    switch (color) {
      case NoiseColor::white: out.samples[i] = w; break;
      case NoiseColor::brown:
        state = 0.98 * state + w;
        out.samples[i] = state;
        break;
      case NoiseColor::hum:
        out.samples[i] = 3.0 * std::sin(2.0 * 3.141592653589793 * hum_hz * i / sample_rate) +
                         std::sin(2.0 * 3.141592653589793 * 3.0 * hum_hz * i / sample_rate) + 0.5 * w;
        break;
    }
  }
  const double peak = peak_abs(out.samples);
  for (auto& v : out.samples) v *= 0.5 / peak;
  return out;
}

Pools write_synthetic_pools(const std::filesystem::path& dir, int n_rirs, int n_noises, double t60_lo,
                            double t60_hi, int sample_rate, std::uint64_t seed) {
  if (n_rirs < 1 || n_noises < 1) throw ConfigError("augment: synthetic pools need at least one file each");
  if (!(t60_lo > 0.0) || t60_lo > t60_hi) throw ConfigError("augment: need 0 < t60_min <= t60_max");
  Pools pools;
  std::filesystem::create_directories(dir / "rir");
  std::filesystem::create_directories(dir / "noise");
  std::mt19937_64 rng(derive_seed(seed, "pools"));
  for (int i = 0; i < n_rirs; ++i) {
    const double t60 = std::uniform_real_distribution<double>(t60_lo, t60_hi)(rng);
    auto path = dir / "rir" / ("rir" + std::to_string(i) + ".wav");
    corpus::write_wav(path, synth_rir(t60, sample_rate, derive_seed(seed, "rir" + std::to_string(i))));
    pools.rirs.push_back(path);
  }
  const NoiseColor colors[] = {NoiseColor::white, NoiseColor::brown, NoiseColor::hum};
  for (int i = 0; i < n_noises; ++i) {
    auto path = dir / "noise" / ("noise" + std::to_string(i) + ".wav");
    corpus::write_wav(path, synth_noise(3.0, sample_rate, colors[i % 3],
                                        derive_seed(seed, "noise" + std::to_string(i))));
    pools.noises.push_back(path);
  }
  return pools;
}

Distorted distort(std::span<const double> clean, std::span<const double> rir, std::span<const double> noise,
                  double snr_db, std::size_t noise_offset) {
  Distorted d;
  d.clean = convolve_rir(clean, rir);
  auto mix = mix_noise_at_snr(d.clean, noise, snr_db, noise_offset);
  d.mixed = std::move(mix.mixed);
  d.noise = std::move(mix.scaled_noise);
  double peak = 0.0;
  for (double v : d.mixed) peak = std::max(peak, std::abs(v));
  for (double v : d.clean) peak = std::max(peak, std::abs(v));
  for (double v : d.noise) peak = std::max(peak, std::abs(v));
  if (peak > 0.99) {
    const double s = 0.99 / peak;
    for (auto* vec : {&d.mixed, &d.clean, &d.noise}) {
      for (auto& v : *vec) v *= s;
    }
  }
  return d;
}

AugmentReport augment_corpus(const corpus::Manifest& manifest, const AugmentSpec& spec,
                             const std::filesystem::path& out_dir, std::span<const corpus::Split> splits) {
  spec.validate();
  AugmentReport report;
  report.manifest.base_dir = out_dir;
  std::map<std::filesystem::path, corpus::Audio> cache;
  auto load = [&](const std::filesystem::path& p) -> const corpus::Audio& {
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, corpus::read_wav(p)).first;
    return it->second;
  };

  for (const auto& rec : manifest.records) {
    if (std::find(splits.begin(), splits.end(), rec.split) == splits.end()) continue;
    const std::string split_dir = "audio/" + std::string(corpus::to_string(rec.split));
    std::filesystem::create_directories(out_dir / split_dir);
    try {
      const auto clean = corpus::read_wav(manifest.audio_file(rec));
      std::vector<corpus::Record> produced;
      for (int copy = 0; copy < spec.copies; ++copy) {
        const std::string id = rec.id + "-aug" + std::to_string(copy);
        std::mt19937_64 rng(derive_seed(spec.seed, id));
        const auto ri = std::uniform_int_distribution<std::size_t>(0, spec.rir_pool.size() - 1)(rng);
        const auto ni = std::uniform_int_distribution<std::size_t>(0, spec.noise_pool.size() - 1)(rng);
        const double snr = std::uniform_real_distribution<double>(spec.snr_lo, spec.snr_hi)(rng);
        const auto& rir = load(spec.rir_pool[ri]);
        const auto& noise = load(spec.noise_pool[ni]);
        if (rir.sample_rate != clean.sample_rate || noise.sample_rate != clean.sample_rate) {
          throw FormatError("sample rate mismatch between " + rec.id + " and the RIR/noise pool");
        }
        const auto offset = std::uniform_int_distribution<std::size_t>(0, noise.samples.size() - 1)(rng);
        auto d = distort(clean.samples, rir.samples, noise.samples, snr, offset);

        corpus::Record out = rec;
        out.id = id;
        out.audio_path = split_dir + "/" + id + ".wav";
        out.augment = corpus::AugmentInfo{rec.id, spec.rir_pool[ri].stem().string(),
                                          spec.noise_pool[ni].stem().string(), snr};
        corpus::write_wav(out_dir / out.audio_path, {std::move(d.mixed), clean.sample_rate});
        if (spec.save_components) {
          corpus::write_wav(out_dir / split_dir / (id + ".clean.wav"), {std::move(d.clean), clean.sample_rate});
          corpus::write_wav(out_dir / split_dir / (id + ".noise.wav"), {std::move(d.noise), clean.sample_rate});
        }
        produced.push_back(std::move(out));
      }
      for (auto& r : produced) report.manifest.records.push_back(std::move(r));
    } catch (const Error& e) {
      report.errors.push_back(rec.id + ": " + e.what());
    }
  }
  return report;
}

}  // namespace slu::augment
