#pragma once

#include <cstdint>
#include <vector>

namespace stegosan {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// splitmix64. All randomness in the toolkit flows through this generator so
/// that keys, datasets and weight initialisations are bit-exact everywhere.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state = 0) noexcept : state_(state) {}

  std::uint64_t next() noexcept {
    state_ += kGoldenGamma;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, bound) by plain modulo (bias accepted).
  std::uint64_t below(std::uint64_t bound) noexcept { return next() % bound; }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes two outputs per call.
  double normal() noexcept;

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// One splitmix64 step applied to `value`: a stateless 64-bit mixer.
std::uint64_t mix64(std::uint64_t value) noexcept;

/// Child seed for stream `index` under `seed`, independent of call order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Fisher-Yates shuffle of 0..n-1 (descending swap order).
std::vector<std::size_t> seeded_permutation(std::size_t n, SplitMix64& rng);

}  // namespace stegosan
