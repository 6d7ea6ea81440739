#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sdid::nd {

/// SplitMix64 generator with Box-Muller normals. The whole state is one
/// 64-bit word, so a stream is reproducible from its seed on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept { return next_u64() % n; }

  /// Standard normal; consumes two uniforms per draw.
  double normal() noexcept {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// Stateless seed derivation: mixes a base seed with a stream tag and index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index) noexcept {
  Rng r(base ^ (tag * 0xd1b54a32d192ed03ULL));
  r.next_u64();
  Rng s(r.next_u64() ^ (index * 0x9e3779b97f4a7c15ULL));
  return s.next_u64();
}

}  // namespace sdid::nd
