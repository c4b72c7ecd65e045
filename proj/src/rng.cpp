#include "stegosan/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

namespace stegosan {

double SplitMix64::normal() noexcept {
  // u1 in (0, 1] keeps log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix64(std::uint64_t value) noexcept {
  SplitMix64 g(value);
  return g.next();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(seed ^ mix64(index + 1));
}

std::vector<std::size_t> seeded_permutation(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace stegosan
