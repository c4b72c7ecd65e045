#include "stegosan/stego.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "stegosan/checksum.hpp"
#include "stegosan/error.hpp"
#include "stegosan/rng.hpp"

namespace stegosan {

using nlohmann::json;

namespace {

constexpr std::size_t kChannels = 3;

void check_rgb(const Tensor& image, const DctConfig& cfg, const char* what) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != cfg.image_size || s[1] != cfg.image_size || s[2] != kChannels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + "x3, got " + shape_to_string(s));
  }
}

void check_position(const CoefficientPosition& p, const DctConfig& cfg) {
  const std::size_t b = cfg.blocks_per_side();
  if (p.block_row >= b || p.block_col >= b || p.freq >= cfg.frequencies() || p.channel >= kChannels) {
    throw ConfigError("coefficient position out of range");
  }
}

json dct_to_json(const DctConfig& cfg) {
  return {{"N", cfg.image_size}, {"n", cfg.block_size}, {"pixel_scale", cfg.pixel_scale}};
}

DctConfig dct_from_json(const json& j) {
  DctConfig cfg{j.at("N").get<std::size_t>(), j.at("n").get<std::size_t>(), j.at("pixel_scale").get<float>()};
  cfg.validate();
  return cfg;
}

json position_to_json(const CoefficientPosition& p) {
  return json::array({p.block_row, p.block_col, p.freq, p.channel});
}

CoefficientPosition position_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("position must be [br, bc, f, ch]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

long parity(double v) {
  const auto r = static_cast<long long>(round_half_away(v));
  return static_cast<long>(((r % 2) + 2) % 2);
}

}  // namespace

std::size_t flat_index(const CoefficientPosition& pos, const DctConfig& cfg, std::size_t channels) {
  const std::size_t b = cfg.blocks_per_side();
  if (pos.block_row >= b || pos.block_col >= b || pos.freq >= cfg.frequencies() || pos.channel >= channels)
    throw ConfigError("coefficient position out of range");
  return ((pos.block_row * b + pos.block_col) * cfg.frequencies() + pos.freq) * channels + pos.channel;
}

CalibrationTable calibrate(const std::vector<Tensor>& images, const DctConfig& cfg, FrequencyWindow window) {
  cfg.validate();
  if (images.empty()) throw DataError("calibrate: no images");
  if (window.first > window.last || window.last >= cfg.frequencies()) throw ConfigError("invalid frequency window");
  const std::size_t b = cfg.blocks_per_side();

  std::vector<CoefficientPosition> grid;
  for (std::size_t br = 0; br < b; ++br)
    for (std::size_t bc = 0; bc < b; ++bc)
      for (std::size_t f = window.first; f <= window.last; ++f)
        for (std::size_t ch = 0; ch < kChannels; ++ch) grid.push_back({br, bc, f, ch});

  // Per-position samples are sorted before summation so the mean is
  // independent of the order in which images are supplied.
  std::vector<std::vector<double>> samples(grid.size());
  std::vector<std::uint64_t> hashes;
  for (const auto& img : images) {
    check_rgb(img, cfg, "calibrate");
    for (float v : img.data())
      if (!(v >= -1.0f && v <= 1.0f)) throw DataError("calibrate: pixel outside [-1, 1]");
    const auto coeffs = image_dct(img, cfg, cfg.pixel_scale);
    for (std::size_t g = 0; g < grid.size(); ++g) samples[g].push_back(std::fabs(coeffs[flat_index(grid[g], cfg)]));
    Fnv1a h;
    h.update_floats(img.data());
    hashes.push_back(h.digest());
  }

  CalibrationTable table;
  table.dct = cfg;
  table.window = window;
  table.image_count = images.size();
  std::sort(hashes.begin(), hashes.end());
  Fnv1a fp;
  for (auto h : hashes) fp.update_u64(h);
  table.fingerprint = fp.hex();

  table.entries.reserve(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    auto& s = samples[g];
    std::sort(s.begin(), s.end());
    const double sum = std::accumulate(s.begin(), s.end(), 0.0);
    table.entries.push_back({grid[g], sum / static_cast<double>(s.size())});
  }
  std::sort(table.entries.begin(), table.entries.end(), [](const auto& a, const auto& b) {
    if (a.mean_abs != b.mean_abs) return a.mean_abs > b.mean_abs;
    return a.position < b.position;
  });
  return table;
}

json calibration_to_json(const CalibrationTable& table) {
  json entries = json::array();
  for (const auto& e : table.entries) {
    const auto& p = e.position;
    entries.push_back(json::array({p.block_row, p.block_col, p.freq, p.channel, e.mean_abs}));
  }
  return {{"dct", dct_to_json(table.dct)},
          {"window", json::array({table.window.first, table.window.last})},
          {"image_count", table.image_count},
          {"fingerprint", table.fingerprint},
          {"entries", entries}};
}

CalibrationTable calibration_from_json(const json& j) {
  try {
    CalibrationTable t;
    t.dct = dct_from_json(j.at("dct"));
    t.window = {j.at("window").at(0).get<std::size_t>(), j.at("window").at(1).get<std::size_t>()};
    t.image_count = j.at("image_count").get<std::size_t>();
    t.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& e : j.at("entries")) {
      if (!e.is_array() || e.size() != 5) throw FormatError("calibration entry must have 5 fields");
      CalibrationEntry entry{{e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<std::size_t>(),
                              e[3].get<std::size_t>()},
                             e[4].get<double>()};
      check_position(entry.position, t.dct);
      if (!t.window.contains(entry.position.freq)) throw FormatError("calibration entry outside the window");
      t.entries.push_back(entry);
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed calibration table: ") + e.what());
  }
}

void save_calibration(const CalibrationTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << calibration_to_json(table).dump(1) << '\n';
}

CalibrationTable load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return calibration_from_json(j);
}

void StegoKey::validate() const {
  if (positions.size() != k || permutation.size() != k) throw ConfigError("key size mismatch");
  std::vector<CoefficientPosition> sorted = positions;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("key positions repeat");
  std::vector<bool> seen(k, false);
  for (auto p : permutation) {
    if (p >= k || seen[p]) throw ConfigError("key permutation is not a bijection");
    seen[p] = true;
  }
}

bool StegoKey::operator==(const StegoKey& o) const {
  return k == o.k && positions == o.positions && permutation == o.permutation;
}

std::uint64_t position_seed(std::size_t y_ep) { return mix64(kGoldenGamma * (static_cast<std::uint64_t>(y_ep) + 1)); }

std::uint64_t permutation_seed(std::size_t id_index) {
  return mix64(kGoldenGamma * (static_cast<std::uint64_t>(id_index) + 1));
}

std::size_t one_hot_index(std::span<const float> code) {
  std::size_t idx = code.size(), ones = 0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] == 1.0f) {
      idx = i;
      ++ones;
    } else if (code[i] != 0.0f) {
      throw ConfigError("code is not one-hot");
    }
  }
  if (ones != 1) throw ConfigError("code is not one-hot");
  return idx;
}

std::vector<float> one_hot(std::size_t index, std::size_t length) {
  if (index >= length) throw ConfigError("one-hot index out of range");
  std::vector<float> v(length, 0.0f);
  v[index] = 1.0f;
  return v;
}

StegoKey derive_key_for_index(std::size_t y_ep, std::size_t id_index, std::size_t k, const CalibrationTable& table,
                              std::size_t m_pool) {
  if (k > m_pool) throw ConfigError("K (" + std::to_string(k) + ") exceeds pool size M (" + std::to_string(m_pool) + ")");
  if (m_pool > table.entries.size()) throw ConfigError("pool size M exceeds calibration table length");
  StegoKey key;
  key.k = k;
  key.seed_meta = {y_ep, id_index, m_pool, position_seed(y_ep), permutation_seed(id_index)};

  std::vector<std::size_t> pool(m_pool);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  SplitMix64 pick(key.seed_meta.position_seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(pick.below(m_pool - i));
    std::swap(pool[i], pool[j]);
    key.positions.push_back(table.entries[pool[i]].position);
  }
  SplitMix64 shuffle(key.seed_meta.permutation_seed);
  key.permutation = seeded_permutation(k, shuffle);
  return key;
}

StegoKey derive_key(std::size_t y_ep, std::span<const float> c, std::size_t k, const CalibrationTable& table,
                    std::size_t m_pool) {
  return derive_key_for_index(y_ep, one_hot_index(c), k, table, m_pool);
}

json key_to_json(const StegoKey& key) {
  json positions = json::array();
  for (const auto& p : key.positions) positions.push_back(position_to_json(p));
  return {{"k", key.k},
          {"positions", positions},
          {"perm", key.permutation},
          {"seed_meta",
           {{"y_ep", key.seed_meta.y_ep},
            {"id_index", key.seed_meta.id_index},
            {"m_pool", key.seed_meta.m_pool},
            {"position_seed", to_hex(key.seed_meta.position_seed)},
            {"permutation_seed", to_hex(key.seed_meta.permutation_seed)}}}};
}

StegoKey key_from_json(const json& j) {
  try {
    StegoKey key;
    key.k = j.at("k").get<std::size_t>();
    for (const auto& p : j.at("positions")) key.positions.push_back(position_from_json(p));
    key.permutation = j.at("perm").get<std::vector<std::size_t>>();
    if (j.contains("seed_meta")) {
      const auto& m = j.at("seed_meta");
      key.seed_meta.y_ep = m.at("y_ep").get<std::size_t>();
      key.seed_meta.id_index = m.at("id_index").get<std::size_t>();
      key.seed_meta.m_pool = m.at("m_pool").get<std::size_t>();
      key.seed_meta.position_seed = std::stoull(m.at("position_seed").get<std::string>(), nullptr, 16);
      key.seed_meta.permutation_seed = std::stoull(m.at("permutation_seed").get<std::string>(), nullptr, 16);
    }
    key.validate();
    return key;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed key: ") + e.what());
  }
}

Tensor build_secret_matrix(const Bits& secret, const StegoKey& key, const DctConfig& cfg) {
  cfg.validate();
  if (secret.size() != key.k) throw ConfigError("secret length differs from key K");
  const std::size_t b = cfg.blocks_per_side();
  Tensor s({b, b, cfg.frequencies(), kChannels}, 0.0f);
  for (std::size_t i = 0; i < key.k; ++i) {
    check_position(key.positions[i], cfg);
    const std::uint8_t bit = secret[key.permutation[i]];
    if (bit > 1) throw ConfigError("secret bits must be 0 or 1");
    s[flat_index(key.positions[i], cfg)] = bit;
  }
  return s;
}

std::vector<double> rounded_scaled_coefficients(const Tensor& sanitized, const DctConfig& cfg) {
  check_rgb(sanitized, cfg, "embed");
  auto c = image_dct(sanitized, cfg, cfg.pixel_scale);
  for (double& v : c) v = round_half_away(v);
  return c;
}

Tensor embed(const Tensor& sanitized, const Bits& secret, const StegoKey& key, const DctConfig& cfg) {
  const Tensor s = build_secret_matrix(secret, key, cfg);
  auto c = rounded_scaled_coefficients(sanitized, cfg);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 2.0 * c[i] + s[i];
  return image_idct(c, kChannels, cfg);
}

namespace {

// Consistency score of a coefficient block against stored integer pixels:
// squared distance of each reconstructed pixel outside its rounding cell.
struct BlockSearch {
  const Tensor& basis;
  std::size_t m;
  std::vector<double> target;  // stored pixels, rounded
  std::vector<double> recon;

  double violation_of(std::span<const double> x) const {
    double v = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      const double e = std::fabs(x[p] - target[p]) - 0.5;
      if (e > 0.0) v += e * e;
    }
    return v;
  }

  void reconstruct(std::span<const double> coeffs) {
    recon.assign(m, 0.0);
    for (std::size_t f = 0; f < m; ++f)
      for (std::size_t p = 0; p < m; ++p) recon[p] += static_cast<double>(basis[f * m + p]) * coeffs[f];
  }

  // Alternating projection: clip the reconstruction into the rounding cells,
  // transform back, and snap each coefficient to its lattice (step 2 keeps
  // parity, step 1 is any integer; parity[f] is the residue mod step).
  void project(std::vector<double>& coeffs, const std::vector<double>& step, const std::vector<double>& residue,
               int iterations) {
    std::vector<double> clipped(m);
    for (int it = 0; it < iterations; ++it) {
      reconstruct(coeffs);
      if (violation_of(recon) == 0.0) return;
      for (std::size_t p = 0; p < m; ++p) clipped[p] = std::clamp(recon[p], target[p] - 0.5, target[p] + 0.5);
      for (std::size_t f = 0; f < m; ++f) {
        double c = 0.0;
        for (std::size_t p = 0; p < m; ++p) c += static_cast<double>(basis[f * m + p]) * clipped[p];
        coeffs[f] = step[f] * round_half_away((c - residue[f]) / step[f]) + residue[f];
      }
    }
  }

  // Coordinate descent: each coefficient moves in steps of step[f] (0 = fixed)
  // while the violation strictly decreases.
  double descend(std::vector<double>& coeffs, const std::vector<double>& step) {
    reconstruct(coeffs);
    double best = violation_of(recon);
    std::vector<double> trial(m);
    for (int sweep = 0; sweep < 32 && best > 0.0; ++sweep) {
      bool moved = false;
      for (std::size_t f = 0; f < m; ++f) {
        if (step[f] == 0.0) continue;
        for (double dir : {1.0, -1.0}) {
          const double d = dir * step[f];
          for (std::size_t p = 0; p < m; ++p) trial[p] = recon[p] + d * basis[f * m + p];
          const double v = violation_of(trial);
          if (v < best - 1e-12) {
            best = v;
            coeffs[f] += d;
            recon.swap(trial);
            moved = true;
            break;
          }
        }
      }
      if (!moved) moved = pair_move(coeffs, step, best);
      if (!moved) break;
    }
    return best;
  }

  // Joint move of two coefficients; used when no single move helps.
  bool pair_move(std::vector<double>& coeffs, const std::vector<double>& step, double& best) {
    std::vector<double> trial(m);
    for (std::size_t f = 0; f < m; ++f) {
      if (step[f] == 0.0) continue;
      for (std::size_t g = f + 1; g < m; ++g) {
        if (step[g] == 0.0) continue;
        for (double df : {1.0, -1.0})
          for (double dg : {1.0, -1.0}) {
            const double a = df * step[f], c = dg * step[g];
            for (std::size_t p = 0; p < m; ++p) trial[p] = recon[p] + a * basis[f * m + p] + c * basis[g * m + p];
            const double v = violation_of(trial);
            if (v < best - 1e-12) {
              best = v;
              coeffs[f] += a;
              coeffs[g] += c;
              recon.swap(trial);
              return true;
            }
          }
      }
    }
    return false;
  }
};

// Decides each key coefficient's parity by searching, for both parities,
// for an integer coefficient block (off-key entries even) whose
// reconstruction rounds to the stored pixels. The lower violation wins; ties
// go to the candidate closest to the direct DCT estimate.
void consistency_decode(const Tensor& image, const StegoKey& key, const DctConfig& cfg, std::vector<double>& coeffs) {
  const std::size_t n = cfg.block_size, m = n * n, b = cfg.blocks_per_side(), side = cfg.image_size;
  const Tensor basis = dct_basis(n);
  const std::vector<double> estimate = coeffs;
  BlockSearch search{basis, m, std::vector<double>(m), {}};
  std::vector<double> est(m), cand(m), step(m), residue(m);
  for (std::size_t i = 0; i < key.k; ++i) {
    const auto& pos = key.positions[i];
    const std::size_t by = pos.block_row, bx = pos.block_col, ch = pos.channel;
    auto coef_index = [&](std::size_t f) { return ((by * b + bx) * m + f) * kChannels + ch; };
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        search.target[y * n + x] = round_half_away(image[((by * n + y) * side + bx * n + x) * kChannels + ch]);
    for (std::size_t f = 0; f < m; ++f) est[f] = estimate[coef_index(f)];

    double best_v = 0.0, best_d = 0.0, best_value = 0.0;
    for (int parity_bit = 0; parity_bit < 2; ++parity_bit) {
      for (std::size_t f = 0; f < m; ++f) {
        cand[f] = 2.0 * round_half_away(est[f] / 2.0);
        step[f] = 2.0;
      }
      for (std::size_t j = 0; j < key.k; ++j) {
        const auto& q = key.positions[j];
        if (j == i || q.block_row != by || q.block_col != bx || q.channel != ch) continue;
        cand[q.freq] = round_half_away(est[q.freq]);
        step[q.freq] = 1.0;
      }
      const std::size_t f = pos.freq;
      const double lo = 2.0 * std::floor((est[f] - parity_bit) / 2.0) + parity_bit;
      cand[f] = (est[f] - lo <= 1.0) ? lo : lo + 2.0;
      std::fill(residue.begin(), residue.end(), 0.0);
      residue[f] = parity_bit;
      step[f] = 2.0;
      search.project(cand, step, residue, 50);
      const double v = search.descend(cand, step);
      double d = 0.0;
      for (std::size_t g = 0; g < m; ++g) d += (cand[g] - est[g]) * (cand[g] - est[g]);
      if (parity_bit == 0 || v < best_v - 1e-9 || (std::fabs(v - best_v) <= 1e-9 && d < best_d)) {
        best_v = v;
        best_d = d;
        best_value = cand[f];
      }
    }
    coeffs[coef_index(pos.freq)] = best_value;
  }
}

}  // namespace

Bits extract(const Tensor& stego_image, const StegoKey& key, const DctConfig& cfg, ExtractMode mode) {
  check_rgb(stego_image, cfg, "extract");
  key.validate();
  auto coeffs = image_dct(stego_image, cfg, 1.0);
  if (mode == ExtractMode::QuantizedConsistency) consistency_decode(stego_image, key, cfg, coeffs);
  Bits bits(key.k, 0);
  for (std::size_t i = 0; i < key.k; ++i) {
    check_position(key.positions[i], cfg);
    bits[key.permutation[i]] = static_cast<std::uint8_t>(parity(coeffs[flat_index(key.positions[i], cfg)]));
  }
  return bits;
}

Tensor quantize_pixels(const Tensor& image) {
  Tensor out = image;
  for (float& v : out.values()) v = static_cast<float>(round_half_away(v));
  return out;
}

double embedding_distortion(const Tensor& sanitized, const Tensor& stego_image, const DctConfig& cfg) {
  if (sanitized.shape() != stego_image.shape()) throw ShapeError("distortion: shape mismatch");
  const double scale = 2.0 * cfg.pixel_scale;
  double s = 0.0;
  for (std::size_t i = 0; i < sanitized.size(); ++i) {
    const double d = stego_image[i] / scale - sanitized[i];
    s += d * d;
  }
  return s / static_cast<double>(sanitized.size());
}

}  // namespace stegosan
