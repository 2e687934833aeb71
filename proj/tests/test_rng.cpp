#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "ptsp/rng.hpp"

using ptsp::Rng;

TEST_CASE("same seed reproduces the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(43);
  int differing = 0;
  Rng a2(42);
  for (int i = 0; i < 64; ++i)
    if (a2.next_u64() != c.next_u64()) ++differing;
  CHECK(differing > 0);
}

TEST_CASE("next_u64 matches the mt19937_64 reference stream") {
  Rng rng(5489u);
  std::mt19937_64 ref(5489u);
  for (int i = 0; i < 16; ++i) CHECK(rng.next_u64() == ref());
}

TEST_CASE("uniform stays in [0, 1) and fills the range") {
  Rng rng(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform(lo, hi) scales the unit draw") {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(b.uniform(-3.0, 5.0) == -3.0 + 8.0 * u);
  }
}

TEST_CASE("uniform_int covers both endpoints") {
  Rng rng(7);
  std::array<int, 6> counts{};
  for (int i = 0; i < 6000; ++i) {
    const int v = rng.uniform_int(2, 7);
    REQUIRE(v >= 2);
    REQUIRE(v <= 7);
    ++counts[v - 2];
  }
  for (int c : counts) CHECK(c > 0);

  Rng single(7);
  for (int i = 0; i < 10; ++i) CHECK(single.uniform_int(-4, -4) == -4);
}

TEST_CASE("normal matches requested moments") {
  Rng rng(123);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(10.0, 3.0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sumsq / n - mean * mean);
  CHECK(mean == doctest::Approx(10.0).epsilon(0.01));
  CHECK(stddev == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("normal consumes exactly two engine draws") {
  Rng a(55), b(55);
  a.normal(0.0, 1.0);
  b.next_u64();
  b.next_u64();
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("normal is a pure function of the two draws") {
  Rng a(77), b(77);
  const double x = a.normal(2.0, 0.5);
  const std::uint64_t r1 = b.next_u64();
  const std::uint64_t r2 = b.next_u64();
  const double u1 = (static_cast<double>(r1 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(r2 >> 11) * 0x1.0p-53;
  const double want =
      2.0 + 0.5 * std::sqrt(-2.0 * std::log(u1)) *
                std::cos(2.0 * std::numbers::pi * u2);
  CHECK(x == want);
}

TEST_CASE("mix is deterministic and separates streams") {
  CHECK(Rng::mix(1, 2) == Rng::mix(1, 2));
  CHECK(Rng::mix(1, 2) != Rng::mix(1, 3));
  CHECK(Rng::mix(1, 2) != Rng::mix(2, 2));
  // splitmix64 finalizer of 0: seed 0 xor index 0
  CHECK(Rng::mix(0, 0) == 0xE220A8397B1DCDAFull);

  std::vector<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 100; ++i) seen.push_back(Rng::mix(99, i));
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}
