#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "ptsp/rng.hpp"
#include "ptsp/synthesize.hpp"
#include "testutil.hpp"

using namespace ptsp;
using testutil::error_of;

namespace {

std::uint8_t to_byte_ref(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

}  // namespace

TEST_CASE("SynthConfig::validate rejects bad parameters") {
  SynthConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  SynthConfig bad = cfg;
  bad.shift_min = 0;
  CHECK(error_of([&] { bad.validate(); }) ==
        "synth config: need 0 < shift_min <= shift_max, got [0, 5]");
  bad = cfg;
  bad.shift_min = 6;
  CHECK_THROWS_AS(bad.validate(), error);
  bad = cfg;
  bad.alpha = -1.0;
  CHECK(error_of([&] { bad.validate(); }) ==
        "synth config: alpha must be >= 0");
  bad = cfg;
  bad.smooth_sigma = 0.0;
  CHECK(error_of([&] { bad.validate(); }) ==
        "synth config: smooth_sigma must be > 0");
  bad = cfg;
  bad.noise_sigma = -0.5;
  CHECK(error_of([&] { bad.validate(); }) ==
        "synth config: noise_sigma must be >= 0");
}

TEST_CASE("random_shift magnitude, axis, and edge replication") {
  SynthConfig cfg;
  const GrayImage img = oracle::random_image(24, 20, 1001);
  Rng rng(77);
  std::set<int> magnitudes;
  int horizontal_count = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto [shifted, shift] = random_shift(img, rng, cfg);
    const auto [dy, dx] = shift;
    // Exactly one axis moves.
    CHECK(((dy == 0) != (dx == 0)));
    const int mag = std::abs(dy) + std::abs(dx);
    CHECK(mag >= cfg.shift_min);
    CHECK(mag <= cfg.shift_max);
    magnitudes.insert(mag);
    if (dy == 0) ++horizontal_count;

    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        const int sr = std::clamp(r - dy, 0, img.height - 1);
        const int sc = std::clamp(c - dx, 0, img.width - 1);
        REQUIRE(shifted(r, c) == img(sr, sc));
      }
  }
  CHECK(magnitudes == std::set<int>({2, 3, 4, 5}));
  CHECK(horizontal_count > 50);
  CHECK(horizontal_count < 150);
}

TEST_CASE("random_shift draw order is axis, magnitude, sign") {
  SynthConfig cfg;
  const GrayImage img = oracle::random_image(16, 16, 5);
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    Rng impl(seed), ref(seed);
    auto [shifted, shift] = random_shift(img, impl, cfg);
    const bool horizontal = ref.uniform_int(0, 1) == 0;
    const int magnitude = ref.uniform_int(cfg.shift_min, cfg.shift_max);
    const int sign = ref.uniform_int(0, 1) == 0 ? 1 : -1;
    CHECK(shift.first == (horizontal ? 0 : sign * magnitude));
    CHECK(shift.second == (horizontal ? sign * magnitude : 0));
  }
}

TEST_CASE("random_shift rejects images smaller than the shift") {
  SynthConfig cfg;
  Rng rng(1);
  const GrayImage tiny = GrayImage::filled(5, 12);
  CHECK(error_of([&] { random_shift(tiny, rng, cfg); }) ==
        "random_shift: image 5x12 too small for shift_max 5");
  CHECK_THROWS_AS(random_shift(GrayImage::filled(12, 4), rng, cfg), error);
  CHECK_NOTHROW(random_shift(GrayImage::filled(6, 6), rng, cfg));
}

TEST_CASE("gaussian_smooth matches direct 2-D convolution") {
  const int width = 20, height = 15;
  Rng rng(314);
  std::vector<double> plane(std::size_t(width) * height);
  for (double& v : plane) v = rng.uniform(-10.0, 10.0);

  const std::vector<double> sep = gaussian_smooth(plane, width, height, 2.5);
  const std::vector<double> full =
      oracle::conv2d_clamped(plane, width, height, 2.5);
  REQUIRE(sep.size() == full.size());
  for (std::size_t i = 0; i < sep.size(); ++i)
    CHECK(std::abs(sep[i] - full[i]) <= 1e-9);
}

TEST_CASE("gaussian_smooth preserves constant planes") {
  std::vector<double> plane(30 * 11, 3.7);
  const std::vector<double> out = gaussian_smooth(plane, 30, 11, 8.0);
  for (double v : out) CHECK(v == doctest::Approx(3.7).epsilon(1e-12));
}

TEST_CASE("elastic_field scaling, determinism, draw order") {
  SynthConfig cfg;
  cfg.smooth_sigma = 2.0;

  SUBCASE("alpha scales, zero alpha kills the field") {
    SynthConfig quiet = cfg;
    quiet.alpha = 0.0;
    Rng rng(9);
    const DisplacementField f = elastic_field(10, 8, rng, quiet);
    CHECK(f.width == 10);
    CHECK(f.height == 8);
    CHECK(f.mean_magnitude() == 0.0);
  }

  SUBCASE("same seed, same field") {
    Rng a(123), b(123);
    const DisplacementField fa = elastic_field(12, 9, a, cfg);
    const DisplacementField fb = elastic_field(12, 9, b, cfg);
    CHECK(fa.dx == fb.dx);
    CHECK(fa.dy == fb.dy);
    CHECK(fa.mean_magnitude() > 0.0);
  }

  SUBCASE("dx plane drawn fully before dy") {
    Rng impl(321), ref(321);
    const DisplacementField f = elastic_field(7, 5, impl, cfg);
    std::vector<double> dx(35), dy(35);
    for (double& v : dx) v = ref.uniform(-1.0, 1.0);
    for (double& v : dy) v = ref.uniform(-1.0, 1.0);
    dx = gaussian_smooth(dx, 7, 5, cfg.smooth_sigma);
    dy = gaussian_smooth(dy, 7, 5, cfg.smooth_sigma);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      CHECK(f.dx[i] == cfg.alpha * dx[i]);
      CHECK(f.dy[i] == cfg.alpha * dy[i]);
    }
  }
}

TEST_CASE("DisplacementField::mean_magnitude") {
  DisplacementField f = DisplacementField::zero(2, 1);
  CHECK(f.mean_magnitude() == 0.0);
  f.dx = {3.0, 0.0};
  f.dy = {4.0, 0.0};
  CHECK(f.mean_magnitude() == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("warp_bilinear with a zero field is the identity") {
  const GrayImage img = oracle::random_image(13, 11, 88);
  const DisplacementField zero = DisplacementField::zero(13, 11);
  CHECK(warp_bilinear(img, zero) == img);
}

TEST_CASE("warp_bilinear integer displacement samples with clamping") {
  const GrayImage img = oracle::random_image(9, 7, 4242);
  DisplacementField f = DisplacementField::zero(9, 7);
  for (double& v : f.dy) v = 1.0;
  for (double& v : f.dx) v = -2.0;
  const GrayImage out = warp_bilinear(img, f);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 9; ++c) {
      const int sr = std::min(r + 1, 6);
      const int sc = std::max(c - 2, 0);
      CHECK(out(r, c) == img(sr, sc));
    }
}

TEST_CASE("warp_bilinear interpolates fractional displacements") {
  GrayImage img = GrayImage::filled(2, 1);
  img(0, 0) = 10;
  img(0, 1) = 30;
  DisplacementField f = DisplacementField::zero(2, 1);
  f.dx = {0.25, 0.0};
  const GrayImage out = warp_bilinear(img, f);
  CHECK(out(0, 0) == 15);  // 0.75*10 + 0.25*30
  CHECK(out(0, 1) == 30);

  DisplacementField wrong = DisplacementField::zero(3, 1);
  CHECK(error_of([&] { warp_bilinear(img, wrong); }) ==
        "warp: field dimensions do not match image");
}

TEST_CASE("add_gaussian_noise statistics and exact draw order") {
  SynthConfig cfg;
  cfg.noise_sigma = 10.0;
  const GrayImage flat = GrayImage::filled(128, 128, 128);

  Rng rng(2024);
  const GrayImage noisy = add_gaussian_noise(flat, rng, cfg);
  double sum = 0.0, sumsq = 0.0;
  for (std::uint8_t v : noisy.data) {
    sum += v;
    sumsq += double(v) * v;
  }
  const double n = double(noisy.data.size());
  const double mean = sum / n;
  const double stddev = std::sqrt(sumsq / n - mean * mean);
  CHECK(mean == doctest::Approx(128.0).epsilon(0.005));
  CHECK(stddev == doctest::Approx(10.0).epsilon(0.03));

  // Per-pixel replication in row-major order.
  Rng ref(2024);
  for (std::size_t i = 0; i < flat.data.size(); ++i)
    REQUIRE(noisy.data[i] ==
            to_byte_ref(flat.data[i] + ref.normal(0.0, cfg.noise_sigma)));

  SynthConfig silent = cfg;
  silent.noise_sigma = 0.0;
  Rng quiet(1);
  CHECK(add_gaussian_noise(flat, quiet, silent) == flat);
}

TEST_CASE("synthesize_ldct chains shift, deform, noise from one stream") {
  SynthConfig cfg;
  cfg.smooth_sigma = 3.0;  // keep the test quick
  const GrayImage ndct = oracle::textured_image(32, 28, 606);

  Rng impl(99);
  auto [ldct, shift] = synthesize_ldct(ndct, impl, cfg);

  Rng ref(99);
  auto [shifted, ref_shift] = random_shift(ndct, ref, cfg);
  const GrayImage deformed = elastic_deform(shifted, ref, cfg);
  const GrayImage expected = add_gaussian_noise(deformed, ref, cfg);

  CHECK(shift == ref_shift);
  CHECK(ldct == expected);
  CHECK_FALSE(ldct == ndct);
}
