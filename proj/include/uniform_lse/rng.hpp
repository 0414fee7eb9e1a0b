#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace uniform_lse {

namespace detail {

/// SplitMix64 output function (Stafford's Mix13 variant).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31U);
}

} // namespace detail

/// Counter-based generator: draw k of stream s under seed is
/// mix64(key(seed, s) + (k + 1) * golden). Any draw can be reproduced from
/// (seed, stream, k) alone, so replicates can run in any order or on any
/// thread and still see the same numbers.
class CounterRng {
public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(detail::mix64(detail::mix64(seed + golden) ^ (stream * 0xd1342543de82ef95ULL + 1))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * golden);
  }

  std::uint64_t draws() const noexcept { return counter_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() noexcept { return static_cast<double>((*this)() >> 11U) * 0x1.0p-53; }

  double uniform(double a, double b) noexcept { return a + (b - a) * uniform01(); }

  /// Standard normal via Box-Muller (one variate per pair of uniforms).
  double normal() noexcept {
    const double u1 = 1.0 - uniform01(); // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  static constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace uniform_lse
