#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "stegosan/checks.hpp"
#include "stegosan/error.hpp"

using namespace stegosan;

namespace {

struct Corpus {
  std::vector<LabeledImage> train, test;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    const DatasetManifest m = plan_dataset(8, 7, 5, 31);
    return Corpus{render_split(m, Split::Train), render_split(m, Split::Test)};
  }();
  return c;
}

CheckConfig quick_config() {
  CheckConfig cfg;
  cfg.seed = 5;
  cfg.train.epochs = 4;
  return cfg;
}

// Re-renders the target identity but stamps the true identity as a bright
// patch whose position depends on it.
NamedSanitizer leaky_sanitizer() {
  return {"leaky", "leaky-v1", [](const LabeledImage& img, std::size_t target) {
            Tensor out = FaceRenderer(8, 7).canonical(target, img.y_ep);
            const std::size_t x0 = 8 * img.y_id;
            for (std::size_t y = 0; y < 8; ++y)
              for (std::size_t x = x0; x < x0 + 8; ++x)
                for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = 0.95f;
            return out;
          }};
}

}  // namespace

TEST_CASE("check names") {
  for (auto k : {CheckKind::Weak, CheckKind::Strong, CheckKind::Utility}) CHECK(check_from_name(check_name(k)) == k);
  CHECK_THROWS_AS(check_from_name("medium"), ConfigError);
}

TEST_CASE("discriminator inputs pass through 8-bit storage") {
  Tensor img({64, 64, 3}, 0.3337f);
  img[0] = 4.0f;
  const Tensor in = check_input(img);
  CHECK(in[0] == 1.0f);
  CHECK(in == quantize_8bit(in));
  CHECK(std::fabs(in[1] - 0.3337f) <= 1.0f / 255.0f);
}

TEST_CASE("check targets are seeded per split and index") {
  CHECK(check_target(1, true, 4, 8) == check_target(1, true, 4, 8));
  std::size_t differs = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(check_target(1, false, i, 8) < 8);
    differs += check_target(1, true, i, 8) != check_target(1, false, i, 8);
  }
  CHECK(differs > 0);
}

TEST_CASE("reports round trip through JSON and files") {
  CheckReport r;
  r.check = CheckKind::Strong;
  r.sanitizer = "adv";
  r.sanitizer_digest = "abc";
  r.n_train = 10;
  r.n_test = 4;
  r.accuracy = 0.25;
  r.chance = 0.125;
  r.confusion = {{1, 0}, {2, 1}};
  r.seed = 9;
  r.disc_cfg = check_config_json(CheckConfig{});
  const CheckReport back = report_from_json(report_to_json(r));
  CHECK(back.check == CheckKind::Strong);
  CHECK(back.sanitizer_digest == "abc");
  CHECK(back.confusion == r.confusion);
  CHECK(back.disc_cfg == r.disc_cfg);

  ReportTable table{{r, r}, {{18, 100, 1.0, 2e-4}, {24, 100, 1.0, 1e-5}}};
  const auto path = (std::filesystem::temp_directory_path() / "stegosan_report_test.json").string();
  emit_report(table, path);
  const ReportTable parsed = parse_report(path);
  CHECK(parsed.checks.size() == 2);
  REQUIRE(parsed.k_sweep.size() == 2);
  CHECK(parsed.k_sweep[1].k == 24);
  CHECK(parsed.k_sweep[0].image_recons_mse == 2e-4);
  CHECK(report_table_json(parsed) == report_table_json(table));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(report_table_from_json(nlohmann::json::array()), FormatError);
}

TEST_CASE("training refuses a set with a missing class") {
  std::vector<nn::LabeledSample> samples;
  for (std::size_t i = 0; i < 6; ++i) samples.push_back({Tensor({64, 64, 3}), i % 2});
  CHECK_THROWS_AS(train_check_discriminator(samples, 3, quick_config()), DataError);
  CHECK_THROWS_AS(run_weak_check({}, corpus().test, pass_through_sanitizer(), quick_config()), DataError);
}

TEST_CASE("weak and strong checks on a sanitizer that leaks identity") {
  const auto& c = corpus();
  const CheckConfig cfg = quick_config();
  const auto weak = run_weak_checks(c.train, c.test, {pass_through_sanitizer(), leaky_sanitizer()}, cfg);
  REQUIRE(weak.size() == 2);
  CHECK(weak[0].chance == doctest::Approx(1.0 / 8));
  CHECK(weak[0].n_test == c.test.size());
  // A discriminator trained on originals recognises originals.
  CHECK(weak[0].accuracy >= 0.8);
  const CheckReport strong = run_strong_check(c.train, c.test, leaky_sanitizer(), cfg);
  CHECK(strong.accuracy >= weak[1].accuracy);
  CHECK(strong.accuracy >= 0.9);
  std::size_t total = 0;
  for (const auto& row : strong.confusion)
    for (auto v : row) total += v;
  CHECK(total == c.test.size());
}

TEST_CASE("utility check collapses for a fixed-expression sanitizer") {
  const auto& c = corpus();
  const CheckReport fixed = run_utility_check(c.train, c.test, fixed_expression_sanitizer(8, 7, 3), quick_config());
  CHECK(fixed.chance == doctest::Approx(1.0 / 7));
  CHECK(fixed.accuracy <= 1.0 / 7 + 0.15);
  CHECK_THROWS_AS(fixed_expression_sanitizer(8, 7, 7), ConfigError);
}

TEST_CASE("shuffled training labels give chance-level identity accuracy") {
  const auto& c = corpus();
  CheckConfig cfg = quick_config();
  cfg.shuffle_train_labels = true;
  const CheckReport r = run_weak_check(c.train, c.test, pass_through_sanitizer(), cfg);
  CHECK(r.accuracy <= 1.0 / 8 + 0.15);
}

TEST_CASE("latent sweep rows") {
  const auto& c = corpus();
  std::vector<Tensor> honest;
  for (const auto& img : c.train) honest.push_back(FaceRenderer(8, 7).canonical(img.y_id, img.y_ep));
  const CalibrationTable table = calibrate(honest, DctConfig{});
  SanitizerConfig base;
  base.scheme = 2;
  const auto rows = sweep_k(c.test, table, {18, 36, 60}, base, 3);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].latent_bit_accuracy == 1.0);
    CHECK(rows[i].n_images == c.test.size());
    if (i) CHECK(rows[i].image_recons_mse <= rows[i - 1].image_recons_mse);
  }
  CHECK_THROWS_AS(sweep_k({}, table, {18}, base, 3), DataError);
}
