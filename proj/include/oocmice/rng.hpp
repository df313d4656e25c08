#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace oocmice {

/// Identifies one stochastic decision. Each distinct key owns an
/// independent random stream, so a draw never depends on how work was
/// scheduled or chunked.
struct DrawKey {
  std::uint64_t seed = 0;
  std::uint64_t imputation = 0;
  std::uint64_t iteration = 0;
  std::uint64_t variable = 0;
  std::uint64_t row = 0;
};

/// Purpose tag mixed into the key so that different consumers of the same
/// coordinates (e.g. initial fill vs. bootstrap weights) never share bits.
enum class Stream : std::uint64_t {
  Draw = 1,
  InitialFill = 2,
  Bootstrap = 3,
  FeatureSubset = 4,
  Amputation = 5,
  Subsample = 6,
  Synthetic = 7,
};

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the state is a pure hash of the key, and the
/// sequence is SplitMix64 from there.
class KeyedStream {
 public:
  constexpr KeyedStream(Stream stream, const DrawKey& key, std::uint64_t salt = 0) noexcept
      : state_(hash_key(stream, key, salt)) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform on the open interval (0, 1).
  constexpr double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound). bound must be positive.
  constexpr std::uint64_t below(std::uint64_t bound) noexcept {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t prod = static_cast<__uint128_t>(x) * bound;
    auto low = static_cast<std::uint64_t>(prod);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        x = next_u64();
        prod = static_cast<__uint128_t>(x) * bound;
        low = static_cast<std::uint64_t>(prod);
      }
    }
    return static_cast<std::uint64_t>(prod >> 64);
  }

  /// Standard normal by Box-Muller; uses exactly two uniforms.
  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson(1) by inversion of a single uniform.
  int poisson1() noexcept {
    double u = uniform();
    double p = std::exp(-1.0);
    double cdf = p;
    int k = 0;
    while (u > cdf && k < 20) {
      ++k;
      p /= k;
      cdf += p;
    }
    return k;
  }

 private:
  static constexpr std::uint64_t hash_key(Stream stream, const DrawKey& key,
                                          std::uint64_t salt) noexcept {
    std::uint64_t h = mix64(key.seed ^ 0x6a09e667f3bcc908ULL);
    h = mix64(h ^ (static_cast<std::uint64_t>(stream) * 0xbb67ae8584caa73bULL));
    h = mix64(h ^ (key.imputation + 0x3c6ef372fe94f82bULL));
    h = mix64(h ^ (key.iteration + 0xa54ff53a5f1d36f1ULL));
    h = mix64(h ^ (key.variable + 0x510e527fade682d1ULL));
    h = mix64(h ^ (key.row + 0x9b05688c2b3e6c1fULL));
    return mix64(h ^ (salt + 0x1f83d9abfb41bd6bULL));
  }

  std::uint64_t state_;
};

}  // namespace oocmice
