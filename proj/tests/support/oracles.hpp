#pragma once

// Reference computations written straight from the definitions, shared by
// the unit tests and the acceptance runner. Nothing here calls into the
// library's transform or extraction code.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "stegosan/stego.hpp"
#include "stegosan/tensor.hpp"

namespace oracle {

/// JPEG zig-zag walk over the anti-diagonals of an n x n block.
inline std::vector<std::pair<std::size_t, std::size_t>> zigzag(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s + 1 < 2 * n; ++s) {
    const std::size_t lo = s < n ? 0 : s - n + 1;
    const std::size_t hi = s < n ? s : n - 1;
    if (s % 2 == 1) {
      for (std::size_t r = lo; r <= hi; ++r) out.emplace_back(r, s - r);
    } else {
      for (std::size_t r = hi + 1; r-- > lo;) out.emplace_back(r, s - r);
    }
  }
  return out;
}

/// Orthonormal DCT-II coefficient (u, v) of one block channel, as a plain
/// double sum of cosines.
inline double coefficient(const stegosan::Tensor& img, std::size_t block_row, std::size_t block_col, std::size_t u,
                          std::size_t v, std::size_t ch, std::size_t n = 8) {
  const double pi = std::numbers::pi;
  const double au = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  const double av = v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  double acc = 0.0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      acc += img.at(block_row * n + y, block_col * n + x, ch) * std::cos((2.0 * y + 1.0) * u * pi / (2.0 * n)) *
             std::cos((2.0 * x + 1.0) * v * pi / (2.0 * n));
  return au * av * acc;
}

/// Whole-image DCT in the flat layout ((br * B + bc) * n^2 + f) * C + ch,
/// f in zig-zag order. Uses a cosine table so it stays affordable in loops.
inline std::vector<double> image_dct(const stegosan::Tensor& img, std::size_t n = 8) {
  const std::size_t size = img.shape()[0], channels = img.shape()[2], blocks = size / n;
  const double pi = std::numbers::pi;
  std::vector<double> cosine(n * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t p = 0; p < n; ++p)
      cosine[k * n + p] = (k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n)) * std::cos((2.0 * p + 1.0) * k * pi / (2.0 * n));
  const auto zz = zigzag(n);
  std::vector<double> out(blocks * blocks * n * n * channels);
  std::vector<double> rows(n * n);
  for (std::size_t br = 0; br < blocks; ++br)
    for (std::size_t bc = 0; bc < blocks; ++bc)
      for (std::size_t ch = 0; ch < channels; ++ch) {
        // rows[y][v] = sum_x p(y, x) cos_v(x)
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t v = 0; v < n; ++v) {
            double acc = 0.0;
            for (std::size_t x = 0; x < n; ++x) acc += img.at(br * n + y, bc * n + x, ch) * cosine[v * n + x];
            rows[y * n + v] = acc;
          }
        for (std::size_t f = 0; f < n * n; ++f) {
          const auto [u, v] = zz[f];
          double acc = 0.0;
          for (std::size_t y = 0; y < n; ++y) acc += cosine[u * n + y] * rows[y * n + v];
          out[((br * blocks + bc) * n * n + f) * channels + ch] = acc;
        }
      }
  return out;
}

inline std::size_t flat(const stegosan::CoefficientPosition& p, std::size_t blocks = 8, std::size_t n = 8,
                        std::size_t channels = 3) {
  return ((p.block_row * blocks + p.block_col) * n * n + p.freq) * channels + p.channel;
}

inline int parity(double coeff) {
  const auto r = static_cast<long long>(std::llround(coeff));
  return static_cast<int>(((r % 2) + 2) % 2);
}

/// Secret bits read from a stego image: parity of the rounded coefficient at
/// key position i is the secret bit at permutation[i].
inline stegosan::Bits extract(const stegosan::Tensor& stego, const stegosan::StegoKey& key) {
  const auto coeffs = image_dct(stego);
  stegosan::Bits bits(key.k, 0);
  for (std::size_t i = 0; i < key.k; ++i)
    bits[key.permutation[i]] = static_cast<std::uint8_t>(parity(coeffs[flat(key.positions[i])]));
  return bits;
}

inline double mse(const stegosan::Tensor& a, const stegosan::Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (static_cast<double>(a[i]) - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace oracle
