#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace ptgf {

/// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Key of an independent stream, derived as hash(seed, index).
constexpr std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(mix64(seed + 0x9E3779B97F4A7C15ULL) ^ mix64(index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

/**
 * Counter-based SplitMix64 stream.
 *
 * The i-th output is mix64(key + (i + 1) * gamma), so any position of a
 * stream can be computed without touching the others and distinct keys
 * give statistically independent streams. Satisfies
 * UniformRandomBitGenerator so it plugs into <random> distributions.
 */
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(derive_stream(seed, stream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal by Box-Muller; stateless so draw order alone fixes the output.
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ptgf
