#include "stegosan/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "stegosan/error.hpp"
#include "stegosan/nn/architectures.hpp"
#include "stegosan/nn/train.hpp"
#include "stegosan/nn/weights_io.hpp"
#include "stegosan/rng.hpp"

namespace stegosan {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<float> sample_latent(const GaussianLatent& lat, std::uint64_t seed) {
  if (lat.mu.size() != lat.log_var.size()) throw ShapeError("latent mu and log_var differ in length");
  SplitMix64 rng(seed);
  std::vector<float> z(lat.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(lat.mu[i]) || !std::isfinite(lat.log_var[i])) throw DataError("latent is not finite");
    const double eps = rng.normal();
    z[i] = static_cast<float>(lat.mu[i] + std::exp(0.5 * lat.log_var[i]) * eps);
  }
  return z;
}

double kl_divergence(const GaussianLatent& lat) {
  if (lat.mu.size() != lat.log_var.size()) throw ShapeError("latent mu and log_var differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < lat.mu.size(); ++i) {
    const double m = lat.mu[i], lv = lat.log_var[i];
    // expm1 keeps the sum exactly zero at the prior
    s += std::expm1(lv) - lv + m * m;
  }
  return 0.5 * s;
}

void LossWeights::validate() const {
  for (double v : {d0, d1, d2, g0, g1, g2, g3})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
}

json loss_weights_to_json(const LossWeights& w) {
  return {{"d0", w.d0}, {"d1", w.d1}, {"d2", w.d2}, {"g0", w.g0}, {"g1", w.g1}, {"g2", w.g2}, {"g3", w.g3}};
}

LossWeights loss_weights_from_json(const json& j) {
  LossWeights w;
  w.d0 = j.value("d0", 1.0);
  w.d1 = j.value("d1", 1.0);
  w.d2 = j.value("d2", 1.0);
  w.g0 = j.value("g0", 1.0);
  w.g1 = j.value("g1", 1.0);
  w.g2 = j.value("g2", 1.0);
  w.g3 = j.value("g3", 1.0);
  w.validate();
  return w;
}

namespace {

struct ClampedLog {
  bool clamped = false;
  double operator()(double p) {
    if (!(p >= 0.0) || p > 1.0 + 1e-6) throw DataError("probability outside [0, 1]");
    if (p < kLogClamp) {
      clamped = true;
      return std::log(kLogClamp);
    }
    return std::log(p);
  }
};

double mean_log(const std::vector<double>& p, ClampedLog& lg, bool complement) {
  if (p.empty()) throw DataError("loss: empty batch");
  double s = 0.0;
  for (double v : p) s += lg(complement ? 1.0 - v : v);
  return s / static_cast<double>(p.size());
}

double mean_log_at(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& labels, ClampedLog& lg,
                   bool complement) {
  if (rows.empty() || rows.size() != labels.size()) throw DataError("loss: rows and labels differ in count");
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (labels[i] >= rows[i].size()) throw DataError("loss: label out of range");
    const double p = rows[i][labels[i]];
    s += lg(complement ? 1.0 - p : p);
  }
  return s / static_cast<double>(rows.size());
}

void add_term(LossBreakdown& b, std::string name, double weight, double value) {
  const double v = weight * value;
  b.terms.emplace_back(std::move(name), v);
  b.total += v;
}

}  // namespace

LossBreakdown loss_discriminator(const DiscriminatorOutputs& out, const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  ClampedLog lg;
  add_term(b, "d0_real", w.d0, mean_log(out.d0_real, lg, false));
  add_term(b, "d0_fake", w.d0, mean_log(out.d0_fake, lg, true));
  add_term(b, "d1_id", w.d1, mean_log_at(out.d1_real, out.y_id, lg, false));
  add_term(b, "d2_ep", w.d2, mean_log_at(out.d2_real, out.y_ep, lg, false));
  b.clamped = lg.clamped;
  return b;
}

LossBreakdown loss_generator(const DiscriminatorOutputs& out, const std::vector<GaussianLatent>& latents,
                             const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  ClampedLog lg;
  add_term(b, "g0_real_fake", w.g0, mean_log(out.d0_fake, lg, true));
  add_term(b, "g1_target_id", w.g1, mean_log_at(out.d1_fake, out.target_c, lg, true));
  add_term(b, "g2_expression", w.g2, mean_log_at(out.d2_fake, out.y_ep, lg, true));
  b.saturated = lg.clamped;
  b.clamped = lg.clamped;
  if (latents.empty()) throw DataError("loss_generator: no latents");
  double kl = 0.0;
  for (const auto& lat : latents) kl += kl_divergence(lat);
  add_term(b, "g3_kl", w.g3, kl / static_cast<double>(latents.size()));
  return b;
}

void SanitizerConfig::validate() const {
  dct.validate();
  lambda.validate();
  if (n_id < 2 || n_ep < 2) throw ConfigError("need at least two identities and two expressions");
  if (scheme != 1 && scheme != 2) throw ConfigError("scheme must be 1 or 2");
  if (k != 0) {
    if (scheme == 1 && k != n_id) throw ConfigError("scheme 1 embeds the one-hot ID: K must equal N_id");
    if (scheme == 2 && std::find(kScheme2Lengths.begin(), kScheme2Lengths.end(), k) == kScheme2Lengths.end()) {
      throw ConfigError("scheme 2 K must be one of 18, 24, ..., 60");
    }
  }
  if (k > m_pool) throw ConfigError("K exceeds pool size M");
}

json sanitizer_config_to_json(const SanitizerConfig& cfg) {
  return {{"kind", cfg.kind == SanitizerKind::Reference ? "reference" : "nn"},
          {"scheme", cfg.scheme},
          {"K", cfg.k},
          {"M", cfg.m_pool},
          {"N_id", cfg.n_id},
          {"N_ep", cfg.n_ep},
          {"dct", {{"N", cfg.dct.image_size}, {"n", cfg.dct.block_size}, {"pixel_scale", cfg.dct.pixel_scale}}},
          {"lambda", loss_weights_to_json(cfg.lambda)},
          {"latent_seed", cfg.latent_seed}};
}

SanitizerConfig sanitizer_config_from_json(const json& j) {
  try {
    SanitizerConfig c;
    const std::string kind = j.value("kind", "reference");
    if (kind != "reference" && kind != "nn") throw FormatError("unknown sanitizer kind " + kind);
    c.kind = kind == "nn" ? SanitizerKind::Network : SanitizerKind::Reference;
    c.scheme = j.at("scheme").get<int>();
    c.k = j.at("K").get<std::size_t>();
    c.m_pool = j.at("M").get<std::size_t>();
    c.n_id = j.at("N_id").get<std::size_t>();
    c.n_ep = j.at("N_ep").get<std::size_t>();
    const auto& d = j.at("dct");
    c.dct.image_size = d.at("N").get<std::size_t>();
    c.dct.block_size = d.at("n").get<std::size_t>();
    c.dct.pixel_scale = d.at("pixel_scale").get<float>();
    if (j.contains("lambda")) c.lambda = loss_weights_from_json(j.at("lambda"));
    c.latent_seed = j.value("latent_seed", std::uint64_t{1});
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed sanitizer config: ") + e.what());
  }
}

SanitizerModel make_reference_sanitizer(const SanitizerConfig& cfg, std::optional<CalibrationTable> table) {
  SanitizerConfig c = cfg;
  c.kind = SanitizerKind::Reference;
  c.validate();
  return {c, std::move(table), {}, {}};
}

namespace {

std::vector<nn::LabeledSample> random_codes(std::size_t dim, std::size_t count, std::uint64_t seed) {
  std::vector<nn::LabeledSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    SplitMix64 rng(derive_seed(seed, i));
    Tensor x({dim});
    for (float& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    out.push_back({std::move(x), 0});
  }
  return out;
}

constexpr std::size_t kWarmUpSamples = 16;

}  // namespace

nn::NetworkGraph random_decoder_dct_path(std::size_t code_dim, const DctConfig& cfg, std::uint64_t seed) {
  nn::NetworkGraph net = build_decoder_dct_path(code_dim, cfg);
  nn::init_weights(net, seed);
  nn::warm_up_batchnorm(net, random_codes(code_dim, kWarmUpSamples, mix64(seed)), kWarmUpSamples);
  return net;
}

SanitizerModel make_network_sanitizer(const SanitizerConfig& cfg, std::uint64_t weight_seed,
                                      std::optional<CalibrationTable> table) {
  SanitizerConfig c = cfg;
  c.kind = SanitizerKind::Network;
  c.validate();
  if (c.dct.image_size != 64) throw ConfigError("network sanitizer works on 64 x 64 images");
  SanitizerModel m{c, std::move(table), nn::build_encoder(c.k), nn::build_decoder(nn::kLatentDim + c.n_id)};
  nn::init_weights(m.encoder, derive_seed(weight_seed, 0));
  nn::init_weights(m.decoder, derive_seed(weight_seed, 1));
  FaceRenderer renderer(c.n_id, c.n_ep, 64);
  std::vector<nn::LabeledSample> faces;
  for (std::size_t i = 0; i < kWarmUpSamples; ++i) faces.push_back({renderer.canonical(i % c.n_id, i % c.n_ep), 0});
  nn::warm_up_batchnorm(m.encoder, faces, kWarmUpSamples);
  nn::warm_up_batchnorm(m.decoder, random_codes(m.code_dim(), kWarmUpSamples, derive_seed(weight_seed, 2)),
                        kWarmUpSamples);
  return m;
}

Tensor honest_sanitize(const SanitizerModel& model, const LabeledImage& img, std::span<const float> c,
                       std::uint64_t latent_seed) {
  const auto& cfg = model.config;
  if (c.size() != cfg.n_id) throw ConfigError("target code length differs from N_id");
  const std::size_t target = one_hot_index(c);
  if (img.y_ep >= cfg.n_ep) throw DataError("expression label out of range");
  if (cfg.kind == SanitizerKind::Reference) {
    return FaceRenderer(cfg.n_id, cfg.n_ep, cfg.dct.image_size).canonical(target, img.y_ep);
  }
  const auto outs = nn::forward(model.encoder, {{"image", img.image}});
  GaussianLatent lat{outs.at("mu").values(), outs.at("log_var").values()};
  std::vector<float> code = sample_latent(lat, latent_seed);
  code.insert(code.end(), c.begin(), c.end());
  const std::size_t dim = code.size();
  return nn::forward_single(model.decoder, Tensor({dim}, std::move(code)));
}

// ---- factor code ----

std::int64_t quantize_signed(double value, double range, std::size_t bits) {
  if (bits == 0) return 0;
  if (bits > 62) throw ConfigError("quantizer bit width too large");
  const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1, lo = -(std::int64_t{1} << (bits - 1));
  const double step = range / static_cast<double>(std::max<std::int64_t>(1, hi));
  const auto q = static_cast<std::int64_t>(round_half_away(value / step));
  return std::clamp(q, lo, hi);
}

double dequantize_signed(std::int64_t code, double range, std::size_t bits) {
  if (bits == 0) return 0.0;
  const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
  const double step = range / static_cast<double>(std::max<std::int64_t>(1, hi));
  return std::clamp(static_cast<double>(code) * step, -range, range);
}

FactorCodeLayout factor_code_layout(std::size_t k, std::size_t n_id, std::size_t n_ep) {
  FactorCodeLayout l;
  l.id_bits = static_cast<std::size_t>(std::bit_width(n_id - 1));
  l.ep_bits = static_cast<std::size_t>(std::bit_width(n_ep - 1));
  if (k < l.id_bits + l.ep_bits) throw ConfigError("K too small for the identity and expression bits");
  const std::size_t rest = k - l.id_bits - l.ep_bits;
  for (std::size_t p = 0; p < 5; ++p) l.nuisance_bits[p] = rest / 5 + (p < rest % 5 ? 1 : 0);
  return l;
}

namespace {

constexpr double nuisance_range(std::size_t p) { return p < 2 ? kMaxShift : kMaxBrightness; }

std::array<double, 5> nuisance_values(const Nuisance& n) {
  return {n.dx, n.dy, n.brightness[0], n.brightness[1], n.brightness[2]};
}

void put_uint(Bits& out, std::uint64_t v, std::size_t bits) {
  for (std::size_t b = bits; b-- > 0;) out.push_back(static_cast<std::uint8_t>((v >> b) & 1));
}

std::uint64_t get_uint(const Bits& in, std::size_t& pos, std::size_t bits) {
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < bits; ++b) v = (v << 1) | (in.at(pos++) & 1);
  return v;
}

}  // namespace

Bits encode_factor_code(const FaceSpec& spec, std::size_t k, std::size_t n_id, std::size_t n_ep) {
  const auto layout = factor_code_layout(k, n_id, n_ep);
  if (spec.id >= n_id || spec.ep >= n_ep) throw DataError("factor out of range");
  Bits bits;
  put_uint(bits, spec.id, layout.id_bits);
  put_uint(bits, spec.ep, layout.ep_bits);
  const auto values = nuisance_values(spec.nuisance);
  std::array<std::uint64_t, 5> codes{};
  for (std::size_t p = 0; p < 5; ++p) {
    const std::int64_t q = quantize_signed(values[p], nuisance_range(p), layout.nuisance_bits[p]);
    codes[p] = static_cast<std::uint64_t>(q);  // two's complement, truncated below
  }
  std::array<std::size_t, 5> sent{};
  for (std::size_t j = 0; bits.size() < k; ++j) {
    const std::size_t p = j % 5;
    const std::size_t b = layout.nuisance_bits[p] - 1 - sent[p]++;
    bits.push_back(static_cast<std::uint8_t>((codes[p] >> b) & 1));
  }
  return bits;
}

FaceSpec decode_factor_code(const Bits& bits, std::size_t n_id, std::size_t n_ep) {
  const auto layout = factor_code_layout(bits.size(), n_id, n_ep);
  FaceSpec spec;
  std::size_t pos = 0;
  spec.id = std::min<std::size_t>(get_uint(bits, pos, layout.id_bits), n_id - 1);
  spec.ep = std::min<std::size_t>(get_uint(bits, pos, layout.ep_bits), n_ep - 1);
  std::array<std::uint64_t, 5> codes{};
  for (std::size_t j = 0; pos < bits.size(); ++j) {
    const std::size_t p = j % 5;
    codes[p] = (codes[p] << 1) | (bits[pos++] & 1);
  }
  std::array<double, 5> v{};
  for (std::size_t p = 0; p < 5; ++p) {
    const std::size_t b = layout.nuisance_bits[p];
    if (b == 0) continue;
    std::int64_t q = static_cast<std::int64_t>(codes[p]);
    if (codes[p] >> (b - 1)) q -= std::int64_t{1} << b;  // sign-extend
    v[p] = dequantize_signed(q, nuisance_range(p), b);
  }
  spec.nuisance = {static_cast<float>(v[0]),
                   static_cast<float>(v[1]),
                   {static_cast<float>(v[2]), static_cast<float>(v[3]), static_cast<float>(v[4])}};
  return spec;
}

Bits scheme_secret(const SanitizerConfig& cfg, const LabeledImage& img) {
  if (cfg.k == 0) return {};
  if (img.y_id >= cfg.n_id || img.y_ep >= cfg.n_ep) throw DataError("label out of range");
  if (cfg.scheme == 1) {
    Bits b(cfg.n_id, 0);
    b[img.y_id] = 1;
    return b;
  }
  return encode_factor_code({img.y_id, img.y_ep, img.nuisance.value_or(Nuisance{})}, cfg.k, cfg.n_id, cfg.n_ep);
}

AdversarialOutput adversarial_sanitize(const SanitizerModel& model, const LabeledImage& img, std::span<const float> c,
                                       std::uint64_t latent_seed) {
  if (!model.calibration) throw ConfigError("adversarial sanitizer needs a calibration table");
  const auto& cfg = model.config;
  AdversarialOutput out;
  out.sanitized = honest_sanitize(model, img, c, latent_seed);
  out.secret = scheme_secret(cfg, img);
  out.key = derive_key(img.y_ep, c, cfg.k, *model.calibration, cfg.m_pool);
  out.stego = embed(out.sanitized, out.secret, out.key, cfg.dct);
  return out;
}

RecoveryLabels classify_labels(const nn::NetworkGraph& id_net, const nn::NetworkGraph& ep_net, const Tensor& stego,
                               const DctConfig& cfg) {
  Tensor x = stego;
  const float scale = 2.0f * cfg.pixel_scale;
  for (float& v : x.values()) v = std::clamp(v / scale, -1.0f, 1.0f);
  x = quantize_8bit(x);
  return {nn::predict_class(ep_net, x), nn::predict_class(id_net, x)};
}

Scheme1Recovery recover_scheme1(const Tensor& stego, const RecoveryLabels& labels, const CalibrationTable& table,
                                const SanitizerConfig& cfg, ExtractMode mode) {
  if (cfg.scheme != 1) throw ConfigError("recover_scheme1 needs a scheme-1 configuration");
  if (labels.y_id >= cfg.n_id || labels.y_ep >= cfg.n_ep) throw DataError("recovery labels out of range");
  Scheme1Recovery r;
  const StegoKey key = derive_key_for_index(labels.y_ep, labels.y_id, cfg.k, table, cfg.m_pool);
  r.bits = extract(stego, key, cfg.dct, mode);
  const auto ones = static_cast<std::size_t>(std::count(r.bits.begin(), r.bits.end(), 1));
  const auto first = std::find(r.bits.begin(), r.bits.end(), 1);
  r.y_id = first == r.bits.end() ? 0 : static_cast<std::size_t>(first - r.bits.begin());
  r.low_confidence = ones != 1;
  return r;
}

Scheme2Recovery recover_scheme2(const Tensor& stego, const RecoveryLabels& labels, const CalibrationTable& table,
                                const SanitizerConfig& cfg, const std::optional<Tensor>& original, ExtractMode mode) {
  if (cfg.scheme != 2) throw ConfigError("recover_scheme2 needs a scheme-2 configuration");
  if (labels.y_id >= cfg.n_id || labels.y_ep >= cfg.n_ep) throw DataError("recovery labels out of range");
  Scheme2Recovery r;
  const StegoKey key = derive_key_for_index(labels.y_ep, labels.y_id, cfg.k, table, cfg.m_pool);
  r.bits = extract(stego, key, cfg.dct, mode);
  r.spec = decode_factor_code(r.bits, cfg.n_id, cfg.n_ep);
  r.reconstruction = FaceRenderer(cfg.n_id, cfg.n_ep, cfg.dct.image_size).render(r.spec);
  if (original) {
    if (original->shape() != r.reconstruction.shape()) throw ShapeError("original image shape differs");
    double s = 0.0;
    for (std::size_t i = 0; i < original->size(); ++i) {
      const double d = static_cast<double>(r.reconstruction[i]) - (*original)[i];
      s += d * d;
    }
    r.mse = s / static_cast<double>(original->size());
  }
  return r;
}

nn::NetworkGraph build_embedding_tail(const DctConfig& cfg) {
  cfg.validate();
  const std::size_t half = cfg.frequencies() * 3, b = cfg.blocks_per_side();
  nn::NetworkGraph net;
  net.add_input("merged", {b, b, 2 * half});
  nn::Conv2D combine = nn::make_conv(1, 2 * half, half, 1, 0, false);
  for (std::size_t o = 0; o < half; ++o) {
    combine.weights[o * 2 * half + o] = 1.0f;
    combine.weights[o * 2 * half + half + o] = 2.0f;
  }
  net.append("combine", std::move(combine));
  net.append("idct", build_idct_conv_layer(cfg, 3));
  net.set_outputs({"idct"});
  return net;
}

Tensor network_embed(const nn::NetworkGraph& tail, const Tensor& secret_matrix, const Tensor& scaled_coeffs,
                     const DctConfig& cfg) {
  const std::size_t half = cfg.frequencies() * 3, b = cfg.blocks_per_side();
  if (secret_matrix.size() != b * b * half || scaled_coeffs.size() != b * b * half) {
    throw ShapeError("network_embed: expected " + std::to_string(b * b * half) + " coefficients per half");
  }
  Tensor merged({b, b, 2 * half});
  for (std::size_t p = 0; p < b * b; ++p)
    for (std::size_t k = 0; k < half; ++k) {
      merged[p * 2 * half + k] = secret_matrix[p * half + k];
      merged[p * 2 * half + half + k] = static_cast<float>(round_half_away(scaled_coeffs[p * half + k]));
    }
  return nn::forward_single(tail, merged);
}

void save_bundle(const SanitizerModel& model, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path root(dir);
  {
    std::ofstream out(root / "config.json");
    if (!out) throw IoError("cannot write " + (root / "config.json").string());
    out << sanitizer_config_to_json(model.config).dump(2) << "\n";
  }
  if (model.calibration) save_calibration(*model.calibration, (root / "calibration.json").string());
  if (model.config.kind == SanitizerKind::Network) {
    nn::save_weights(model.encoder, (root / "encoder.sgsn").string());
    nn::save_weights(model.decoder, (root / "decoder.sgsn").string());
  }
}

SanitizerModel load_bundle(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "config.json");
  if (!in) throw IoError("cannot open " + (root / "config.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config.json: ") + e.what());
  }
  SanitizerModel m;
  m.config = sanitizer_config_from_json(j);
  if (fs::exists(root / "calibration.json")) m.calibration = load_calibration((root / "calibration.json").string());
  if (m.config.kind == SanitizerKind::Network) {
    m.encoder = nn::load_weights((root / "encoder.sgsn").string());
    m.decoder = nn::load_weights((root / "decoder.sgsn").string());
  }
  return m;
}

}  // namespace stegosan
