#ifndef PTSP_SYNTHESIZE_HPP
#define PTSP_SYNTHESIZE_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "ptsp/image.hpp"
#include "ptsp/rng.hpp"

namespace ptsp {

/// Degradation parameters for turning a clean image into a synthetic
/// low-dose one: integer shift, elastic warp, then Gaussian noise.
struct SynthConfig {
  int shift_min = 2;
  int shift_max = 5;
  double alpha = 25.0;         // displacement scale of the elastic field
  double smooth_sigma = 8.0;   // Gaussian smoothing of the random field, px
  double noise_sigma = 40.0;   // intensity units
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-pixel real-valued displacement maps, same dimensions as the image
/// they warp. dx moves sample columns, dy moves sample rows.
struct DisplacementField {
  int width = 0;
  int height = 0;
  std::vector<double> dx;
  std::vector<double> dy;

  static DisplacementField zero(int width, int height);
  /// Mean of sqrt(dx^2 + dy^2) over all pixels.
  double mean_magnitude() const;
};

/// Integer shift along exactly one axis, magnitude in
/// [shift_min, shift_max], random sign. A positive component moves content
/// toward larger indices: out(r,c) = in(r-dy, c-dx) with edge replication.
/// Draw order: axis, magnitude, sign. Returns the applied (dy, dx).
std::pair<GrayImage, std::pair<int, int>> random_shift(const GrayImage& img,
                                                       Rng& rng,
                                                       const SynthConfig& cfg);

/// Separable Gaussian smoothing of a real-valued plane, kernel radius
/// ceil(3*sigma), clamp-to-edge addressing. Equivalent to full 2-D
/// convolution with the outer-product kernel over the clamped plane.
std::vector<double> gaussian_smooth(const std::vector<double>& plane,
                                    int width, int height, double sigma);

/// alpha * gaussian_smooth(uniform(-1,1) field) per axis. Draw order: the
/// whole dx plane row-major, then the whole dy plane.
DisplacementField elastic_field(int width, int height, Rng& rng,
                                const SynthConfig& cfg);

/// Samples img at (r + dy, c + dx) with bilinear interpolation, sample
/// coordinates clamped to the image; result rounded and clipped to [0,255].
GrayImage warp_bilinear(const GrayImage& img, const DisplacementField& field);

/// warp_bilinear over a freshly drawn elastic_field.
GrayImage elastic_deform(const GrayImage& img, Rng& rng,
                         const SynthConfig& cfg);

/// out(x) = clip(round(in(x) + n(x))) with n ~ N(0, sigma^2) i.i.d.,
/// drawn row-major.
GrayImage add_gaussian_noise(const GrayImage& img, Rng& rng,
                             const SynthConfig& cfg);

/// Full degradation: shift, then elastic deformation, then noise, all from
/// the one generator in that order. Returns the applied (dy, dx) shift.
std::pair<GrayImage, std::pair<int, int>> synthesize_ldct(
    const GrayImage& ndct, Rng& rng, const SynthConfig& cfg);

}  // namespace ptsp

#endif
