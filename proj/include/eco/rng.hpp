#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace eco::rng {

/// splitmix64 finalizer. Counter-based draws hash (seed, counter) through
/// this, so every value is addressable and independent of call order.
inline constexpr std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t combine(std::uint64_t seed, std::uint64_t v) {
  return mix(seed ^ (0x9e3779b97f4a7c15ULL + (v << 1)));
}

inline std::uint64_t at(std::uint64_t seed, std::uint64_t counter) {
  return mix(mix(seed) ^ counter);
}

/// Uniform draw in the open interval (0, 1); never returns 0 or 1, so it is
/// safe under log().
inline double unit_at(std::uint64_t seed, std::uint64_t counter) {
  return (static_cast<double>(at(seed, counter) >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two counter-indexed uniforms.
inline double normal_at(std::uint64_t seed, std::uint64_t counter) {
  const double u1 = unit_at(seed, 2 * counter);
  const double u2 = unit_at(seed, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential convenience wrapper over the counter-based draws.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() { return at(seed_, counter_++); }
  double next_unit() { return unit_at(seed_, counter_++); }
  double next_normal() { return normal_at(seed_, counter_++); }

  /// Unbiased draw in [0, n) by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Seeded uniform permutation of {0, ..., n-1} (Fisher-Yates).
inline std::vector<std::size_t> permutation(std::size_t n,
                                            std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Stream stream(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(stream.next_below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace eco::rng
