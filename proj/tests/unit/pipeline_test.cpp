#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "stegosan/error.hpp"
#include "stegosan/pipeline.hpp"
#include "stegosan/rng.hpp"

using namespace stegosan;

namespace {

const CalibrationTable& table() {
  static const CalibrationTable t = [] {
    const FaceRenderer r(8, 7);
    std::vector<Tensor> images;
    for (std::size_t id = 0; id < 8; ++id)
      for (std::size_t ep = 0; ep < 7; ++ep) images.push_back(r.canonical(id, ep));
    return calibrate(images, DctConfig{});
  }();
  return t;
}

LabeledImage sample_face(std::size_t id, std::size_t ep, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const Nuisance n = sample_nuisance(rng);
  return {FaceRenderer(8, 7).render({id, ep, n}), id, ep, n};
}

}  // namespace

TEST_CASE("KL divergence against the closed form") {
  CHECK(kl_divergence({{0.0f, 0.0f}, {0.0f, 0.0f}}) == 0.0);
  const GaussianLatent lat{{0.5f, -1.0f, 2.0f}, {0.3f, -0.7f, 0.0f}};
  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    expected += 0.5 * (std::exp(double(lat.log_var[i])) + lat.mu[i] * lat.mu[i] - 1.0 - lat.log_var[i]);
  CHECK(kl_divergence(lat) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(kl_divergence(lat) > 0.0);
  CHECK_THROWS_AS(kl_divergence({{0.0f}, {}}), ShapeError);
}

TEST_CASE("latent sampling is reparameterised and seeded") {
  const GaussianLatent lat{std::vector<float>(2000, 1.5f), std::vector<float>(2000, std::log(0.25f))};
  const auto a = sample_latent(lat, 3);
  CHECK(a == sample_latent(lat, 3));
  CHECK_FALSE(a == sample_latent(lat, 4));
  double mean = 0.0, var = 0.0;
  for (float v : a) mean += v;
  mean /= a.size();
  for (float v : a) var += (v - mean) * (v - mean);
  var /= a.size();
  CHECK(mean == doctest::Approx(1.5).epsilon(0.05));
  CHECK(var == doctest::Approx(0.25).epsilon(0.15));
  const GaussianLatent point{{0.7f}, {-80.0f}};
  CHECK(sample_latent(point, 1)[0] == doctest::Approx(0.7f));
}

TEST_CASE("adversarial objectives computed by hand") {
  DiscriminatorOutputs out;
  out.d0_real = {0.9, 0.6};
  out.d0_fake = {0.2, 0.4};
  out.d1_real = {{0.7, 0.3}, {0.1, 0.9}};
  out.d2_real = {{0.5, 0.5}, {0.8, 0.2}};
  out.d1_fake = {{0.25, 0.75}, {0.6, 0.4}};
  out.d2_fake = {{0.3, 0.7}, {0.9, 0.1}};
  out.y_id = {0, 1};
  out.y_ep = {1, 0};
  out.target_c = {1, 0};
  const LossWeights w;
  const LossBreakdown d = loss_discriminator(out, w);
  const double d_expected = (std::log(0.9) + std::log(0.6)) / 2 + (std::log(0.8) + std::log(0.6)) / 2 +
                            (std::log(0.7) + std::log(0.9)) / 2 + (std::log(0.5) + std::log(0.8)) / 2;
  CHECK(d.total == doctest::Approx(d_expected).epsilon(1e-12));
  CHECK(d.terms.size() == 4);
  CHECK_FALSE(d.clamped);

  const std::vector<GaussianLatent> lats{{{1.0f}, {0.0f}}, {{0.0f}, {0.0f}}};
  LossWeights w2;
  w2.g3 = 2.0;
  const LossBreakdown g = loss_generator(out, lats, w2);
  const double g_expected = (std::log(0.8) + std::log(0.6)) / 2 + (std::log(0.25) + std::log(0.4)) / 2 +
                            (std::log(0.3) + std::log(0.1)) / 2 + 2.0 * (0.5 + 0.0) / 2;
  CHECK(g.total == doctest::Approx(g_expected).epsilon(1e-12));
  CHECK(g.terms.back().first == "g3_kl");

  out.d0_fake = {1.0, 0.4};
  const LossBreakdown sat = loss_generator(out, lats, w2);
  CHECK(sat.saturated);
  CHECK(std::isfinite(sat.total));
  out.d0_fake = {1.5, 0.4};
  CHECK_THROWS_AS(loss_discriminator(out, w), DataError);

  LossWeights bad;
  bad.g1 = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(loss_weights_from_json(loss_weights_to_json(w2)).g3 == 2.0);
}

TEST_CASE("signed quantizer") {
  for (std::size_t bits : {2u, 3u, 5u, 8u}) {
    const double range = 0.5, step = range / ((1 << (bits - 1)) - 1);
    CHECK(quantize_signed(0.0, range, bits) == 0);
    CHECK(dequantize_signed(0, range, bits) == 0.0);
    for (double v = -range; v <= range; v += 0.01) {
      const double back = dequantize_signed(quantize_signed(v, range, bits), range, bits);
      CHECK(std::fabs(back - v) <= step / 2 + 1e-12);
    }
  }
  CHECK(quantize_signed(0.3, 0.5, 0) == 0);
  CHECK(dequantize_signed(quantize_signed(0.5, 0.5, 1), 0.5, 1) == 0.0);
}

TEST_CASE("factor codes round trip") {
  for (std::size_t k : kScheme2Lengths) {
    const auto layout = factor_code_layout(k, 8, 7);
    CHECK(layout.id_bits == 3);
    CHECK(layout.ep_bits == 3);
    std::size_t total = layout.id_bits + layout.ep_bits;
    for (auto b : layout.nuisance_bits) total += b;
    CHECK(total == k);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const LabeledImage img = sample_face(s % 8, s % 7, s + 100 * k);
      const FaceSpec spec{img.y_id, img.y_ep, *img.nuisance};
      const Bits bits = encode_factor_code(spec, k, 8, 7);
      REQUIRE(bits.size() == k);
      // Identity bits first, MSB first.
      CHECK(bits[0] == ((spec.id >> 2) & 1));
      CHECK(bits[2] == (spec.id & 1));
      const FaceSpec back = decode_factor_code(bits, 8, 7);
      CHECK(back.id == spec.id);
      CHECK(back.ep == spec.ep);
      const std::array<float, 5> a{spec.nuisance.dx, spec.nuisance.dy, spec.nuisance.brightness[0],
                                   spec.nuisance.brightness[1], spec.nuisance.brightness[2]};
      const std::array<float, 5> b{back.nuisance.dx, back.nuisance.dy, back.nuisance.brightness[0],
                                   back.nuisance.brightness[1], back.nuisance.brightness[2]};
      for (std::size_t p = 0; p < 5; ++p) {
        const double range = p < 2 ? kMaxShift : kMaxBrightness;
        const std::size_t nb = layout.nuisance_bits[p];
        const double step = range / std::max(1, (1 << (nb - 1)) - 1);
        CHECK(std::fabs(a[p] - b[p]) <= step / 2 + 1e-6);
      }
    }
  }
  CHECK_THROWS_AS(factor_code_layout(5, 8, 7), ConfigError);
  const FaceSpec zero = decode_factor_code(Bits(18, 0), 8, 7);
  CHECK(zero.id == 0);
  CHECK(zero.nuisance == Nuisance{});
}

TEST_CASE("sanitizer configuration") {
  SanitizerConfig cfg;
  cfg.validate();
  cfg.k = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.k = 0;
  cfg.validate();
  cfg.scheme = 2;
  cfg.k = 20;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.k = 24;
  cfg.m_pool = 96;
  cfg.validate();
  const SanitizerConfig back = sanitizer_config_from_json(sanitizer_config_to_json(cfg));
  CHECK(back.scheme == 2);
  CHECK(back.k == 24);
  CHECK(back.m_pool == 96);
  CHECK(back.dct.pixel_scale == cfg.dct.pixel_scale);
  cfg.scheme = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("reference honest sanitizer swaps identity and keeps expression") {
  const SanitizerModel model = make_reference_sanitizer(SanitizerConfig{});
  const LabeledImage img = sample_face(2, 5, 1);
  const Tensor out = honest_sanitize(model, img, one_hot(6, 8));
  CHECK(out == FaceRenderer(8, 7).canonical(6, 5));
  CHECK_THROWS_AS(honest_sanitize(model, img, one_hot(1, 5)), ConfigError);
  CHECK_THROWS_AS(adversarial_sanitize(model, img, one_hot(1, 8)), ConfigError);
}

TEST_CASE("scheme 1 hides the input identity under the target identity") {
  SanitizerConfig cfg;
  const SanitizerModel model = make_reference_sanitizer(cfg, table());
  std::size_t wrong_hits = 0;
  for (std::uint64_t s = 0; s < 16; ++s) {
    const LabeledImage img = sample_face(s % 8, s % 7, s);
    const std::size_t c = (s * 5 + 3) % 8;
    const AdversarialOutput adv = adversarial_sanitize(model, img, one_hot(c, 8));
    CHECK(adv.secret == scheme_secret(cfg, img));
    CHECK(adv.key == derive_key_for_index(img.y_ep, c, 8, table(), cfg.m_pool));
    CHECK(adv.sanitized == honest_sanitize(model, img, one_hot(c, 8)));
    const Bits read = oracle::extract(adv.stego, adv.key);
    CHECK(read == adv.secret);
    const Scheme1Recovery rec = recover_scheme1(adv.stego, {img.y_ep, c}, table(), cfg);
    CHECK(rec.y_id == img.y_id);
    CHECK_FALSE(rec.low_confidence);
    // The wrong expression label points at other positions. Unkeyed coefficients
    // all read 0, so a wrong key only hits the secret by sharing its set bit.
    const Scheme1Recovery wrong = recover_scheme1(adv.stego, {(img.y_ep + 1) % 7, c}, table(), cfg);
    CHECK(derive_key_for_index((img.y_ep + 1) % 7, c, cfg.k, table(), cfg.m_pool).positions != adv.key.positions);
    wrong_hits += !wrong.low_confidence && wrong.bits == adv.secret;
  }
  CHECK(wrong_hits <= 4);
}

TEST_CASE("scheme 2 reconstructs the input from the factor code") {
  SanitizerConfig cfg;
  cfg.scheme = 2;
  cfg.k = 60;
  cfg.m_pool = 240;
  const SanitizerModel model = make_reference_sanitizer(cfg, table());
  const LabeledImage img = sample_face(4, 3, 77);
  const AdversarialOutput adv = adversarial_sanitize(model, img, one_hot(1, 8));
  CHECK(adv.secret == encode_factor_code({4, 3, *img.nuisance}, 60, 8, 7));
  const Scheme2Recovery rec = recover_scheme2(adv.stego, {3, 1}, table(), cfg, img.image);
  CHECK(rec.bits == adv.secret);
  CHECK(rec.spec.id == 4);
  REQUIRE(rec.mse.has_value());
  CHECK(*rec.mse == doctest::Approx(oracle::mse(rec.reconstruction, img.image)));
  CHECK(*rec.mse < 1e-4);
}

TEST_CASE("network embedding tail matches the direct embedding") {
  SanitizerConfig cfg;
  const SanitizerModel model = make_reference_sanitizer(cfg, table());
  const LabeledImage img = sample_face(3, 2, 5);
  const AdversarialOutput adv = adversarial_sanitize(model, img, one_hot(5, 8));
  const nn::NetworkGraph tail = build_embedding_tail(cfg.dct);
  const Tensor out = network_embed(tail, build_secret_matrix(adv.secret, adv.key, cfg.dct),
                                   image_dct_tensor(adv.sanitized, cfg.dct, cfg.dct.pixel_scale), cfg.dct);
  CHECK(max_abs_diff(out, adv.stego) < 1e-3f);
  CHECK(oracle::extract(out, adv.key) == adv.secret);
}

TEST_CASE("network sanitizer produces images and survives a bundle round trip") {
  SanitizerConfig cfg;
  cfg.kind = SanitizerKind::Network;
  const SanitizerModel model = make_network_sanitizer(cfg, 3, table());
  const LabeledImage img = sample_face(1, 4, 9);
  const Tensor out = honest_sanitize(model, img, one_hot(2, 8), 11);
  CHECK(out.shape() == Shape{64, 64, 3});
  for (float v : out.data()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(out == honest_sanitize(model, img, one_hot(2, 8), 11));
  const AdversarialOutput adv = adversarial_sanitize(model, img, one_hot(2, 8), 11);
  CHECK(oracle::extract(adv.stego, adv.key) == adv.secret);

  const auto dir = std::filesystem::temp_directory_path() / "stegosan_bundle_test";
  std::filesystem::remove_all(dir);
  save_bundle(model, dir.string());
  const SanitizerModel back = load_bundle(dir.string());
  CHECK(back.config.kind == SanitizerKind::Network);
  REQUIRE(back.calibration.has_value());
  CHECK(back.calibration->fingerprint == table().fingerprint);
  CHECK(honest_sanitize(back, img, one_hot(2, 8), 11) == out);
  std::filesystem::remove_all(dir);
}
