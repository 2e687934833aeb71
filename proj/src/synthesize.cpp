#include "ptsp/synthesize.hpp"

#include <algorithm>
#include <cmath>

namespace ptsp {

namespace {

inline int clampi(int v, int lo, int hi) { return std::clamp(v, lo, hi); }

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(
      std::clamp(std::lround(v), 0l, 255l));
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

}  // namespace

void SynthConfig::validate() const {
  if (shift_min <= 0 || shift_min > shift_max)
    throw error("synth config: need 0 < shift_min <= shift_max, got [" +
                std::to_string(shift_min) + ", " + std::to_string(shift_max) +
                "]");
  if (alpha < 0.0) throw error("synth config: alpha must be >= 0");
  if (smooth_sigma <= 0.0) throw error("synth config: smooth_sigma must be > 0");
  if (noise_sigma < 0.0) throw error("synth config: noise_sigma must be >= 0");
}

DisplacementField DisplacementField::zero(int width, int height) {
  DisplacementField f;
  f.width = width;
  f.height = height;
  f.dx.assign(static_cast<std::size_t>(width) * height, 0.0);
  f.dy.assign(static_cast<std::size_t>(width) * height, 0.0);
  return f;
}

double DisplacementField::mean_magnitude() const {
  if (dx.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < dx.size(); ++i)
    sum += std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
  return sum / static_cast<double>(dx.size());
}

std::pair<GrayImage, std::pair<int, int>> random_shift(const GrayImage& img,
                                                       Rng& rng,
                                                       const SynthConfig& cfg) {
  cfg.validate();
  if (img.width <= cfg.shift_max || img.height <= cfg.shift_max)
    throw error("random_shift: image " + std::to_string(img.width) + "x" +
                std::to_string(img.height) + " too small for shift_max " +
                std::to_string(cfg.shift_max));

  const bool horizontal = rng.uniform_int(0, 1) == 0;
  const int magnitude = rng.uniform_int(cfg.shift_min, cfg.shift_max);
  const int sign = rng.uniform_int(0, 1) == 0 ? 1 : -1;
  const int dy = horizontal ? 0 : sign * magnitude;
  const int dx = horizontal ? sign * magnitude : 0;

  GrayImage out = GrayImage::filled(img.width, img.height);
  for (int r = 0; r < img.height; ++r) {
    const int sr = clampi(r - dy, 0, img.height - 1);
    for (int c = 0; c < img.width; ++c)
      out(r, c) = img(sr, clampi(c - dx, 0, img.width - 1));
  }
  return {std::move(out), {dy, dx}};
}

std::vector<double> gaussian_smooth(const std::vector<double>& plane,
                                    int width, int height, double sigma) {
  const std::vector<double> kernel = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;

  // Horizontal pass, then vertical; both clamp indices to the plane.
  std::vector<double> tmp(plane.size());
  for (int r = 0; r < height; ++r) {
    const double* src = plane.data() + static_cast<std::size_t>(r) * width;
    double* dst = tmp.data() + static_cast<std::size_t>(r) * width;
    for (int c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * src[clampi(c + i, 0, width - 1)];
      dst[c] = acc;
    }
  }
  std::vector<double> out(plane.size());
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] *
               tmp[static_cast<std::size_t>(clampi(r + i, 0, height - 1)) *
                       width +
                   c];
      out[static_cast<std::size_t>(r) * width + c] = acc;
    }
  }
  return out;
}

DisplacementField elastic_field(int width, int height, Rng& rng,
                                const SynthConfig& cfg) {
  cfg.validate();
  DisplacementField f = DisplacementField::zero(width, height);
  for (double& v : f.dx) v = rng.uniform(-1.0, 1.0);
  for (double& v : f.dy) v = rng.uniform(-1.0, 1.0);
  f.dx = gaussian_smooth(f.dx, width, height, cfg.smooth_sigma);
  f.dy = gaussian_smooth(f.dy, width, height, cfg.smooth_sigma);
  for (double& v : f.dx) v *= cfg.alpha;
  for (double& v : f.dy) v *= cfg.alpha;
  return f;
}

GrayImage warp_bilinear(const GrayImage& img, const DisplacementField& field) {
  if (field.width != img.width || field.height != img.height)
    throw error("warp: field dimensions do not match image");
  GrayImage out = GrayImage::filled(img.width, img.height);
  const double max_r = static_cast<double>(img.height - 1);
  const double max_c = static_cast<double>(img.width - 1);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * img.width + c;
      const double sr = std::clamp(r + field.dy[i], 0.0, max_r);
      const double sc = std::clamp(c + field.dx[i], 0.0, max_c);
      const int r0 = static_cast<int>(sr);
      const int c0 = static_cast<int>(sc);
      const int r1 = std::min(r0 + 1, img.height - 1);
      const int c1 = std::min(c0 + 1, img.width - 1);
      const double fr = sr - r0;
      const double fc = sc - c0;
      const double v = (1.0 - fr) * ((1.0 - fc) * img(r0, c0) + fc * img(r0, c1)) +
                       fr * ((1.0 - fc) * img(r1, c0) + fc * img(r1, c1));
      out(r, c) = to_byte(v);
    }
  }
  return out;
}

GrayImage elastic_deform(const GrayImage& img, Rng& rng,
                         const SynthConfig& cfg) {
  return warp_bilinear(img, elastic_field(img.width, img.height, rng, cfg));
}

GrayImage add_gaussian_noise(const GrayImage& img, Rng& rng,
                             const SynthConfig& cfg) {
  cfg.validate();
  GrayImage out = GrayImage::filled(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = to_byte(img.data[i] + rng.normal(0.0, cfg.noise_sigma));
  return out;
}

std::pair<GrayImage, std::pair<int, int>> synthesize_ldct(
    const GrayImage& ndct, Rng& rng, const SynthConfig& cfg) {
  auto [shifted, shift] = random_shift(ndct, rng, cfg);
  GrayImage deformed = elastic_deform(shifted, rng, cfg);
  return {add_gaussian_noise(deformed, rng, cfg), shift};
}

}  // namespace ptsp
