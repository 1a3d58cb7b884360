#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace nuzz {

// Variates are derived from the raw mt19937_64 stream with fixed transforms
// instead of the <random> distributions, whose algorithms are
// implementation-defined. Identical seeds therefore give identical draws on
// every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Unit-rate exponential, strictly positive.
  double exponential() { return -std::log(uniform()); }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

  /// Uniform integer in [0, n). Multiply-high mapping; bias is below 2^-64 * n.
  std::uint64_t index(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-run seed: mix64(mix64(base) ^ fnv1a(name)) combined with the repeat
/// index through one more mix64 round.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view name,
                                    std::uint64_t repeat) noexcept {
  const std::uint64_t h = mix64(mix64(base) ^ fnv1a(name));
  return mix64(h ^ mix64(repeat + 0x632be59bd9b4e019ULL));
}

}  // namespace nuzz
