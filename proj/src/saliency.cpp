#include "slu/saliency.hpp"

#include <algorithm>
#include <fstream>

#include "slu/error.hpp"

namespace slu::saliency {

SaliencyMap saliency_from_gradients(const Tensor<double>& gradients, std::size_t target_class) {
  SaliencyMap m;
  m.target_class = target_class;
  m.values = gradients;
  double peak = 0.0;
  for (auto& v : m.values.values()) {
    v = std::abs(v);
    peak = std::max(peak, v);
  }
  for (std::size_t t = 0; t < m.values.rows(); ++t) {
    double s = 0.0;
    for (double v : m.values.row(t)) s += v * v;
    m.frame_scores.push_back(std::sqrt(s));
  }
  m.normalized = m.values;
  if (peak > 0.0) {
    for (auto& v : m.normalized.values()) v /= peak;
  }
  return m;
}

double region_mass(const SaliencyMap& map, std::size_t begin, std::size_t end) {
  end = std::min(end, map.frame_scores.size());
  double inside = 0.0, total = 0.0;
  for (std::size_t t = 0; t < map.frame_scores.size(); ++t) {
    total += map.frame_scores[t];
    if (t >= begin && t < end) inside += map.frame_scores[t];
  }
  return total > 0.0 ? inside / total : 0.0;
}

void write_pgm(const std::filesystem::path& path, const Tensor<double>& frames) {
  const std::size_t width = frames.rows(), height = frames.cols();
  const auto [lo, hi] = std::minmax_element(frames.values().begin(), frames.values().end());
  const double span = *hi - *lo;
  std::vector<unsigned char> pixels(width * height);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t bin = height - 1 - y;
    for (std::size_t x = 0; x < width; ++x) {
      const double v = frames(x, bin);
      pixels[y * width + x] =
          span > 0.0 ? static_cast<unsigned char>(std::lround(255.0 * (v - *lo) / span)) : 128;
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  Image img;
  is >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !is) throw FormatError(path.string() + ": not an 8-bit P5 image");
  is.get();
  img.pixels.resize(img.width * img.height);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

void render_saliency(const std::filesystem::path& prefix, const SaliencyMap& map, const Tensor<double>& features) {
  if (features.shape() != map.values.shape()) {
    throw DimensionError("render_saliency: map " + nd::shape_str(map.values.shape()) + " vs features " +
                         nd::shape_str(features.shape()));
  }
  write_pgm(prefix.string() + ".features.pgm", features);
  write_pgm(prefix.string() + ".saliency.pgm", map.values);
}

void write_saliency_csv(const std::filesystem::path& path, const SaliencyMap& map) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.precision(9);
  for (std::size_t t = 0; t < map.values.rows(); ++t) {
    for (double v : map.values.row(t)) os << v << ',';
    os << map.frame_scores[t] << '\n';
  }
}

}  // namespace slu::saliency
