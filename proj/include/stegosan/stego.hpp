#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stegosan/dct.hpp"
#include "stegosan/tensor.hpp"

namespace stegosan {

using Bits = std::vector<std::uint8_t>;

struct CoefficientPosition {
  std::size_t block_row = 0;
  std::size_t block_col = 0;
  std::size_t freq = 0;  // zig-zag index
  std::size_t channel = 0;

  auto operator<=>(const CoefficientPosition&) const = default;
};

/// Inclusive zig-zag index range treated as "middle frequency".
struct FrequencyWindow {
  std::size_t first = 20;
  std::size_t last = 43;

  bool contains(std::size_t f) const { return f >= first && f <= last; }
  std::size_t width() const { return last - first + 1; }
};

/// Index of `pos` in the flat coefficient layout produced by image_dct on a
/// three-channel image: ((block_row * B + block_col) * n^2 + freq) * 3 + channel.
std::size_t flat_index(const CoefficientPosition& pos, const DctConfig& cfg, std::size_t channels = 3);

/// Round half away from zero.
inline double round_half_away(double v) { return std::round(v); }

struct CalibrationEntry {
  CoefficientPosition position;
  double mean_abs = 0.0;
};

struct CalibrationTable {
  std::vector<CalibrationEntry> entries;  // descending by mean_abs, ties by position
  std::size_t image_count = 0;
  std::string fingerprint;  // order-independent hash of the calibration images
  DctConfig dct;
  FrequencyWindow window;
};

/// Ranks every mid-frequency position by mean |pixel_scale * dct| over `images`
/// (each N x N x 3 in [-1, 1]). The result does not depend on image order.
CalibrationTable calibrate(const std::vector<Tensor>& images, const DctConfig& cfg, FrequencyWindow window = {});

nlohmann::json calibration_to_json(const CalibrationTable& table);
CalibrationTable calibration_from_json(const nlohmann::json& j);
void save_calibration(const CalibrationTable& table, const std::string& path);
CalibrationTable load_calibration(const std::string& path);

struct KeySeedMeta {
  std::size_t y_ep = 0;
  std::size_t id_index = 0;
  std::size_t m_pool = 0;
  std::uint64_t position_seed = 0;
  std::uint64_t permutation_seed = 0;
};

struct StegoKey {
  std::size_t k = 0;
  std::vector<CoefficientPosition> positions;  // positions[i] carries secret[permutation[i]]
  std::vector<std::size_t> permutation;
  KeySeedMeta seed_meta;

  void validate() const;
  bool operator==(const StegoKey& other) const;
};

std::uint64_t position_seed(std::size_t y_ep);
std::uint64_t permutation_seed(std::size_t id_index);

/// Index of the single 1 in a one-hot code; throws ConfigError otherwise.
std::size_t one_hot_index(std::span<const float> code);
std::vector<float> one_hot(std::size_t index, std::size_t length);

/// Positions: partial Fisher-Yates over the table's top-M entries driven by
/// position_seed(y_ep). Permutation: Fisher-Yates over [0, K) driven by
/// permutation_seed(index of the 1 in c).
StegoKey derive_key(std::size_t y_ep, std::span<const float> c, std::size_t k, const CalibrationTable& table,
                    std::size_t m_pool);
StegoKey derive_key_for_index(std::size_t y_ep, std::size_t id_index, std::size_t k, const CalibrationTable& table,
                              std::size_t m_pool);

nlohmann::json key_to_json(const StegoKey& key);
StegoKey key_from_json(const nlohmann::json& j);

/// (N/n) x (N/n) x n^2 x 3 tensor with the permuted secret bits at key
/// positions and zeros elsewhere.
Tensor build_secret_matrix(const Bits& secret, const StegoKey& key, const DctConfig& cfg);

/// round(pixel_scale * dct(I')) for a three-channel image, in the flat layout.
std::vector<double> rounded_scaled_coefficients(const Tensor& sanitized, const DctConfig& cfg);

/// I'' = idct(2 * round(pixel_scale * dct(I')) + S).
Tensor embed(const Tensor& sanitized, const Bits& secret, const StegoKey& key, const DctConfig& cfg);

enum class ExtractMode {
  /// Parity of the nearest integer to each key coefficient.
  Nearest,
  /// For images whose pixels were rounded to integers: per block, chooses
  /// the integer coefficient candidates whose reconstruction re-rounds to the
  /// stored pixels. Reduces to Nearest on lossless input.
  QuantizedConsistency,
};

Bits extract(const Tensor& stego_image, const StegoKey& key, const DctConfig& cfg,
             ExtractMode mode = ExtractMode::Nearest);

/// Rounds every pixel to the nearest integer (half away from zero), which is
/// what 8-bit-plus-sign storage of I'' keeps.
Tensor quantize_pixels(const Tensor& image);

/// Mean squared difference between I'' / (2 * pixel_scale) and I'.
double embedding_distortion(const Tensor& sanitized, const Tensor& stego_image, const DctConfig& cfg);

}  // namespace stegosan
