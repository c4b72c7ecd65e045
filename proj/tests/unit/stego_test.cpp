#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "stegosan/data.hpp"
#include "stegosan/error.hpp"
#include "stegosan/rng.hpp"
#include "stegosan/stego.hpp"

using namespace stegosan;

namespace {

const CalibrationTable& faces_table() {
  static const CalibrationTable table = [] {
    const FaceRenderer r(8, 7);
    std::vector<Tensor> images;
    for (std::size_t id = 0; id < 8; ++id)
      for (std::size_t ep = 0; ep < 7; ++ep) images.push_back(r.canonical(id, ep));
    return calibrate(images, DctConfig{});
  }();
  return table;
}

Tensor face(std::size_t id, std::size_t ep, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return FaceRenderer(8, 7).render({id, ep, sample_nuisance(rng)});
}

Bits random_bits(std::size_t k, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Bits b(k);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng.below(2));
  return b;
}

}  // namespace

TEST_CASE("flat coefficient index") {
  const DctConfig cfg;
  for (std::size_t br : {0u, 3u, 7u})
    for (std::size_t f : {0u, 20u, 63u})
      for (std::size_t ch : {0u, 2u}) {
        const CoefficientPosition p{br, 7 - br, f, ch};
        CHECK(flat_index(p, cfg) == oracle::flat(p));
      }
  CHECK_THROWS_AS(flat_index({8, 0, 0, 0}, cfg), ConfigError);
}

TEST_CASE("rounding is half away from zero") {
  CHECK(round_half_away(2.5) == 3.0);
  CHECK(round_half_away(-2.5) == -3.0);
  CHECK(round_half_away(0.49) == 0.0);
  CHECK(round_half_away(-1.5) == -2.0);
}

TEST_CASE("calibration ranks window positions and ignores image order") {
  const auto& table = faces_table();
  const FrequencyWindow window;
  CHECK(table.entries.size() == 64 * window.width() * 3);
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    CHECK(window.contains(table.entries[i].position.freq));
    if (i) CHECK(table.entries[i - 1].mean_abs >= table.entries[i].mean_abs);
  }
  const FaceRenderer r(8, 7);
  std::vector<Tensor> images;
  for (std::size_t id = 8; id-- > 0;)
    for (std::size_t ep = 7; ep-- > 0;) images.push_back(r.canonical(id, ep));
  const CalibrationTable reversed = calibrate(images, DctConfig{});
  CHECK(reversed.fingerprint == table.fingerprint);
  REQUIRE(reversed.entries.size() == table.entries.size());
  for (std::size_t i = 0; i < table.entries.size(); ++i)
    CHECK(reversed.entries[i].position == table.entries[i].position);

  // Mean |scaled coefficient| of the top entry, recomputed directly.
  const auto top = table.entries.front().position;
  double acc = 0.0;
  for (const auto& img : images) acc += std::fabs(oracle::image_dct(img)[oracle::flat(top)] * 127.5);
  CHECK(table.entries.front().mean_abs == doctest::Approx(acc / images.size()).epsilon(1e-6));

  CHECK_THROWS_AS(calibrate({}, DctConfig{}), DataError);
  CHECK_THROWS_AS(calibrate({Tensor({64, 64, 3}, 2.0f)}, DctConfig{}), DataError);
}

TEST_CASE("calibration tables survive JSON") {
  const auto& table = faces_table();
  const CalibrationTable back = calibration_from_json(calibration_to_json(table));
  CHECK(back.fingerprint == table.fingerprint);
  CHECK(back.image_count == table.image_count);
  REQUIRE(back.entries.size() == table.entries.size());
  CHECK(back.entries[5].position == table.entries[5].position);
  const auto path = (std::filesystem::temp_directory_path() / "stegosan_cal_test.json").string();
  save_calibration(table, path);
  CHECK(load_calibration(path).entries.back().position == table.entries.back().position);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(calibration_from_json(nlohmann::json::parse(R"({"entries": 3})")), FormatError);
}

TEST_CASE("keys: positions from the expression, permutation from the identity") {
  const auto& table = faces_table();
  const std::size_t m = 32;
  std::set<CoefficientPosition> pool;
  for (std::size_t i = 0; i < m; ++i) pool.insert(table.entries[i].position);
  for (std::size_t ep = 0; ep < 7; ++ep) {
    const StegoKey a = derive_key_for_index(ep, 0, 8, table, m);
    const StegoKey b = derive_key_for_index(ep, 5, 8, table, m);
    a.validate();
    CHECK(a.positions == b.positions);
    CHECK(a == derive_key(ep, one_hot(0, 8), 8, table, m));
    std::set<CoefficientPosition> unique(a.positions.begin(), a.positions.end());
    CHECK(unique.size() == 8);
    for (const auto& p : a.positions) CHECK(pool.contains(p));
    auto perm = a.permutation;
    std::sort(perm.begin(), perm.end());
    for (std::size_t i = 0; i < 8; ++i) CHECK(perm[i] == i);
  }
  std::set<std::vector<CoefficientPosition>> per_ep;
  for (std::size_t ep = 0; ep < 7; ++ep) per_ep.insert(derive_key_for_index(ep, 0, 8, table, m).positions);
  CHECK(per_ep.size() == 7);
  std::set<std::vector<std::size_t>> per_id;
  for (std::size_t id = 0; id < 8; ++id) per_id.insert(derive_key_for_index(0, id, 8, table, m).permutation);
  CHECK(per_id.size() == 8);
  // Over every (y_ep, c) pair, which position carries which secret bit.
  std::set<std::vector<std::pair<CoefficientPosition, std::size_t>>> assignments;
  for (std::size_t ep = 0; ep < 7; ++ep)
    for (std::size_t id = 0; id < 8; ++id) {
      const StegoKey key = derive_key_for_index(ep, id, 8, table, m);
      key.validate();
      std::vector<std::pair<CoefficientPosition, std::size_t>> a;
      for (std::size_t i = 0; i < 8; ++i) a.emplace_back(key.positions[i], key.permutation[i]);
      std::sort(a.begin(), a.end());
      assignments.insert(a);
    }
  CHECK(assignments.size() >= 50);

  CHECK_THROWS_AS(derive_key_for_index(0, 0, 40, table, 32), ConfigError);
  CHECK_THROWS_AS(derive_key(0, std::vector<float>{0, 1, 1}, 3, table, 32), ConfigError);
  CHECK(key_from_json(key_to_json(derive_key_for_index(3, 4, 24, table, 96))) ==
        derive_key_for_index(3, 4, 24, table, 96));
}

TEST_CASE("one-hot helpers") {
  CHECK(one_hot_index(one_hot(3, 8)) == 3);
  CHECK_THROWS_AS(one_hot_index(std::vector<float>(8, 0.0f)), ConfigError);
  CHECK_THROWS_AS(one_hot(8, 8), ConfigError);
}

TEST_CASE("secret matrix places permuted bits at key positions") {
  const DctConfig cfg;
  const StegoKey key = derive_key_for_index(2, 6, 24, faces_table(), 96);
  const Bits secret = random_bits(24, 3);
  const Tensor s = build_secret_matrix(secret, key, cfg);
  CHECK(s.shape() == Shape{8, 8, 64, 3});
  double total = 0.0;
  for (float v : s.data()) total += v;
  CHECK(total == std::count(secret.begin(), secret.end(), 1));
  for (std::size_t i = 0; i < key.k; ++i) CHECK(s[oracle::flat(key.positions[i])] == secret[key.permutation[i]]);
  CHECK_THROWS_AS(build_secret_matrix(Bits(5), key, cfg), ConfigError);
  CHECK_THROWS_AS(build_secret_matrix(Bits(24, 2), key, cfg), ConfigError);
}

TEST_CASE("embedding sets every coefficient's parity") {
  const DctConfig cfg;
  for (std::uint64_t t = 0; t < 12; ++t) {
    const std::size_t k = t % 2 ? 8 : 42;
    const StegoKey key = derive_key_for_index(t % 7, t % 8, k, faces_table(), 4 * k);
    const Bits secret = random_bits(k, 100 + t);
    const Tensor img = face(t % 8, (t + 3) % 7, t);
    const Tensor stego = embed(img, secret, key, cfg);
    const auto coeffs = oracle::image_dct(stego);
    std::vector<int> expected(coeffs.size(), 0);
    for (std::size_t i = 0; i < k; ++i) expected[oracle::flat(key.positions[i])] = secret[key.permutation[i]];
    std::size_t bad = 0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      bad += oracle::parity(coeffs[i]) != expected[i];
      bad += std::fabs(coeffs[i] - std::round(coeffs[i])) > 1e-3;
    }
    CHECK(bad == 0);
    CHECK(oracle::extract(stego, key) == secret);
    CHECK(extract(stego, key, cfg) == secret);
    CHECK(extract(stego, key, cfg, ExtractMode::QuantizedConsistency) == secret);
    // I'' / 255 stays close to I'.
    CHECK(embedding_distortion(img, stego, cfg) < 1e-4);
  }
}

TEST_CASE("embedding doubles the rounded scaled coefficients") {
  const DctConfig cfg;
  const Tensor img = face(1, 1, 9);
  const StegoKey key = derive_key_for_index(1, 1, 8, faces_table(), 32);
  const Bits zeros(8, 0);
  const Tensor stego = embed(img, zeros, key, cfg);
  const auto rounded = rounded_scaled_coefficients(img, cfg);
  const auto reference = oracle::image_dct(img);
  const auto stego_coeffs = oracle::image_dct(stego);
  for (std::size_t i = 0; i < rounded.size(); i += 13) {
    CHECK(rounded[i] == std::round(reference[i] * cfg.pixel_scale));
    CHECK(stego_coeffs[i] == doctest::Approx(2.0 * rounded[i]).epsilon(1e-4));
  }
}

TEST_CASE("quantized extraction recovers bits after integer rounding") {
  const DctConfig cfg;
  std::size_t exact = 0;
  const std::size_t trials = 20;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const StegoKey key = derive_key_for_index(t % 7, (t * 3) % 8, 8, faces_table(), 32);
    const Bits secret = random_bits(8, 200 + t);
    const Tensor stored = quantize_pixels(embed(face(t % 8, t % 7, 50 + t), secret, key, cfg));
    for (float v : stored.data()) REQUIRE(v == std::round(v));
    exact += extract(stored, key, cfg, ExtractMode::QuantizedConsistency) == secret;
  }
  CHECK(exact >= trials - 1);
}
