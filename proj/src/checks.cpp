#include "stegosan/checks.hpp"

#include <algorithm>
#include <fstream>
#include <memory>

#include "stegosan/checksum.hpp"
#include "stegosan/error.hpp"
#include "stegosan/parallel.hpp"
#include "stegosan/rng.hpp"

namespace stegosan {

using nlohmann::json;

std::string check_name(CheckKind kind) {
  switch (kind) {
    case CheckKind::Weak: return "weak";
    case CheckKind::Strong: return "strong";
    case CheckKind::Utility: return "utility";
  }
  return "?";
}

CheckKind check_from_name(const std::string& name) {
  if (name == "weak") return CheckKind::Weak;
  if (name == "strong") return CheckKind::Strong;
  if (name == "utility") return CheckKind::Utility;
  throw ConfigError("unknown check '" + name + "'");
}

NamedSanitizer make_check_sanitizer(const SanitizerModel& model, bool adversarial) {
  Fnv1a h;
  h.update(sanitizer_config_to_json(model.config).dump());
  h.update(adversarial ? "adversarial" : "honest");
  if (model.calibration) h.update(model.calibration->fingerprint);
  const std::string name = adversarial ? "adversarial" : "honest";
  const std::size_t n_id = model.config.n_id;
  // Shared copy so the function object stays cheap to pass around.
  auto shared = std::make_shared<const SanitizerModel>(model);
  if (!adversarial) {
    return {name, h.hex(), [shared, n_id](const LabeledImage& img, std::size_t c) {
              return honest_sanitize(*shared, img, one_hot(c, n_id));
            }};
  }
  const float scale = 2.0f * model.config.dct.pixel_scale;
  return {name, h.hex(), [shared, n_id, scale](const LabeledImage& img, std::size_t c) {
            Tensor out = adversarial_sanitize(*shared, img, one_hot(c, n_id)).stego;
            for (float& v : out.values()) v = std::clamp(v / scale, -1.0f, 1.0f);
            return out;
          }};
}

NamedSanitizer pass_through_sanitizer() {
  return {"pass-through", "identity", [](const LabeledImage& img, std::size_t) { return img.image; }};
}

NamedSanitizer fixed_expression_sanitizer(std::size_t n_id, std::size_t n_ep, std::size_t ep, std::size_t size) {
  auto renderer = std::make_shared<const FaceRenderer>(n_id, n_ep, size);
  if (ep >= n_ep) throw ConfigError("fixed expression out of range");
  return {"fixed-expression", "fixed-ep-" + std::to_string(ep),
          [renderer, ep](const LabeledImage&, std::size_t c) { return renderer->canonical(c, ep); }};
}

json check_config_json(const CheckConfig& cfg) {
  return {{"conv_channels", cfg.disc.conv_channels},
          {"hidden", cfg.disc.hidden},
          {"image_size", cfg.disc.image_size},
          {"learning_rate", cfg.train.learning_rate},
          {"epochs", cfg.train.epochs},
          {"batch_size", cfg.train.batch_size},
          {"train_seed", cfg.train.seed},
          {"shuffle_train_labels", cfg.shuffle_train_labels}};
}

std::size_t check_target(std::uint64_t seed, bool train_split, std::size_t index, std::size_t n_id) {
  SplitMix64 rng(derive_seed(mix64(seed + (train_split ? 1 : 2)), index));
  return static_cast<std::size_t>(rng.below(n_id));
}

Tensor check_input(const Tensor& image) {
  Tensor x = image;
  for (float& v : x.values()) v = std::clamp(v, -1.0f, 1.0f);
  return quantize_8bit(x);
}

nn::NetworkGraph train_check_discriminator(const std::vector<nn::LabeledSample>& samples, std::size_t n_classes,
                                           const CheckConfig& cfg) {
  std::vector<std::size_t> count(n_classes, 0);
  for (const auto& s : samples) {
    if (s.label >= n_classes) throw DataError("check: label out of range");
    ++count[s.label];
  }
  for (std::size_t c = 0; c < n_classes; ++c)
    if (count[c] == 0) throw DataError("check: class " + std::to_string(c) + " absent from the training set");
  nn::NetworkGraph net = nn::build_check_discriminator(n_classes, cfg.disc);
  nn::init_weights(net, derive_seed(cfg.seed, 0xD15C));
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 0x7EA1);
  if (!cfg.shuffle_train_labels) return nn::train_classifier(net, samples, tc).net;
  std::vector<nn::LabeledSample> shuffled = samples;
  SplitMix64 rng(derive_seed(cfg.seed, 0x5AFF));
  const auto perm = seeded_permutation(samples.size(), rng);
  for (std::size_t i = 0; i < samples.size(); ++i) shuffled[i].label = samples[perm[i]].label;
  return nn::train_classifier(net, shuffled, tc).net;
}

namespace {

std::vector<nn::LabeledSample> sanitized_samples(const std::vector<LabeledImage>& images, const NamedSanitizer* san,
                                                 bool train_split, bool label_id, const CheckConfig& cfg) {
  std::vector<nn::LabeledSample> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const LabeledImage& img = images[i];
    const Tensor raw = san ? san->run(img, check_target(cfg.seed, train_split, i, cfg.n_id)) : img.image;
    out[i] = {check_input(raw), label_id ? img.y_id : img.y_ep};
  });
  return out;
}

CheckReport evaluate(const nn::NetworkGraph& net, const std::vector<nn::LabeledSample>& test, std::size_t n_classes,
                     CheckKind kind, const NamedSanitizer& san, std::size_t n_train, const CheckConfig& cfg) {
  if (test.empty()) throw DataError("check: empty test set");
  std::vector<std::size_t> predicted(test.size());
  parallel_for(test.size(), [&](std::size_t i) { predicted[i] = nn::predict_class(net, test[i].input); });
  CheckReport r;
  r.check = kind;
  r.sanitizer = san.name;
  r.sanitizer_digest = san.digest;
  r.n_train = n_train;
  r.n_test = test.size();
  r.chance = 1.0 / static_cast<double>(n_classes);
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ++r.confusion[test[i].label][predicted[i]];
    hits += predicted[i] == test[i].label;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
  r.seed = cfg.seed;
  r.disc_cfg = check_config_json(cfg);
  return r;
}

void check_sizes(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test) {
  if (train.empty() || test.empty()) throw DataError("check: train and test sets must be non-empty");
}

}  // namespace

std::vector<CheckReport> run_weak_checks(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                                         const std::vector<NamedSanitizer>& sanitizers, const CheckConfig& cfg) {
  check_sizes(train, test);
  const auto train_set = sanitized_samples(train, nullptr, true, true, cfg);
  const auto net = train_check_discriminator(train_set, cfg.n_id, cfg);
  std::vector<CheckReport> out;
  for (const auto& san : sanitizers) {
    const auto test_set = sanitized_samples(test, &san, false, true, cfg);
    out.push_back(evaluate(net, test_set, cfg.n_id, CheckKind::Weak, san, train.size(), cfg));
  }
  return out;
}

CheckReport run_weak_check(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                           const NamedSanitizer& sanitizer, const CheckConfig& cfg) {
  return run_weak_checks(train, test, {sanitizer}, cfg).front();
}

namespace {

CheckReport run_sanitized_check(CheckKind kind, const std::vector<LabeledImage>& train,
                                const std::vector<LabeledImage>& test, const NamedSanitizer& san,
                                const CheckConfig& cfg) {
  check_sizes(train, test);
  const bool by_id = kind != CheckKind::Utility;
  const std::size_t n_classes = by_id ? cfg.n_id : cfg.n_ep;
  const auto train_set = sanitized_samples(train, &san, true, by_id, cfg);
  const auto net = train_check_discriminator(train_set, n_classes, cfg);
  const auto test_set = sanitized_samples(test, &san, false, by_id, cfg);
  return evaluate(net, test_set, n_classes, kind, san, train.size(), cfg);
}

}  // namespace

CheckReport run_strong_check(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                             const NamedSanitizer& sanitizer, const CheckConfig& cfg) {
  return run_sanitized_check(CheckKind::Strong, train, test, sanitizer, cfg);
}

CheckReport run_utility_check(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                              const NamedSanitizer& sanitizer, const CheckConfig& cfg) {
  return run_sanitized_check(CheckKind::Utility, train, test, sanitizer, cfg);
}

CheckReport run_check(CheckKind kind, const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                      const NamedSanitizer& sanitizer, const CheckConfig& cfg) {
  if (kind == CheckKind::Weak) return run_weak_check(train, test, sanitizer, cfg);
  return run_sanitized_check(kind, train, test, sanitizer, cfg);
}

std::vector<SweepRow> sweep_k(const std::vector<LabeledImage>& images, const CalibrationTable& table,
                              const std::vector<std::size_t>& ks, const SanitizerConfig& base, std::uint64_t seed,
                              bool quantize) {
  if (images.empty()) throw DataError("sweep: no images");
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    SanitizerConfig cfg = base;
    cfg.scheme = 2;
    cfg.k = k;
    cfg.m_pool = std::max(cfg.m_pool, 4 * k);
    const SanitizerModel model = make_reference_sanitizer(cfg, table);
    std::vector<std::size_t> correct(images.size());
    std::vector<double> mse(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
      const LabeledImage& img = images[i];
      const std::size_t c = check_target(seed, false, i, cfg.n_id);
      const auto adv = adversarial_sanitize(model, img, one_hot(c, cfg.n_id));
      const Tensor stored = quantize ? quantize_pixels(adv.stego) : adv.stego;
      const auto rec = recover_scheme2(stored, {img.y_ep, c}, table, cfg, img.image,
                                       quantize ? ExtractMode::QuantizedConsistency : ExtractMode::Nearest);
      std::size_t hits = 0;
      for (std::size_t b = 0; b < k; ++b) hits += rec.bits[b] == adv.secret[b];
      correct[i] = hits;
      mse[i] = *rec.mse;
    });
    SweepRow row{k, images.size(), 0.0, 0.0};
    std::size_t total = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      total += correct[i];
      row.image_recons_mse += mse[i];
    }
    row.latent_bit_accuracy = static_cast<double>(total) / static_cast<double>(k * images.size());
    row.image_recons_mse /= static_cast<double>(images.size());
    rows.push_back(row);
  }
  return rows;
}

json report_to_json(const CheckReport& r) {
  return {{"check", check_name(r.check)}, {"sanitizer", r.sanitizer}, {"sanitizer_digest", r.sanitizer_digest},
          {"n_train", r.n_train},         {"n_test", r.n_test},       {"accuracy", r.accuracy},
          {"chance", r.chance},           {"confusion", r.confusion}, {"seed", r.seed},
          {"disc_cfg", r.disc_cfg}};
}

CheckReport report_from_json(const json& j) {
  try {
    CheckReport r;
    r.check = check_from_name(j.at("check").get<std::string>());
    r.sanitizer = j.value("sanitizer", "");
    r.sanitizer_digest = j.at("sanitizer_digest").get<std::string>();
    r.n_train = j.at("n_train").get<std::size_t>();
    r.n_test = j.at("n_test").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.chance = j.at("chance").get<double>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.disc_cfg = j.at("disc_cfg");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed check report: ") + e.what());
  }
}

json sweep_row_to_json(const SweepRow& r) {
  return {{"K", r.k},
          {"n_images", r.n_images},
          {"latent_bit_accuracy", r.latent_bit_accuracy},
          {"image_recons_mse", r.image_recons_mse}};
}

SweepRow sweep_row_from_json(const json& j) {
  try {
    return {j.at("K").get<std::size_t>(), j.at("n_images").get<std::size_t>(),
            j.at("latent_bit_accuracy").get<double>(), j.at("image_recons_mse").get<double>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed sweep row: ") + e.what());
  }
}

json report_table_json(const ReportTable& table) {
  json checks = json::array(), sweep = json::array();
  for (const auto& r : table.checks) checks.push_back(report_to_json(r));
  for (const auto& r : table.k_sweep) sweep.push_back(sweep_row_to_json(r));
  return {{"checks", checks}, {"k_sweep", sweep}};
}

ReportTable report_table_from_json(const json& j) {
  ReportTable t;
  if (!j.is_object()) throw FormatError("report must be a JSON object");
  for (const auto& r : j.value("checks", json::array())) t.checks.push_back(report_from_json(r));
  for (const auto& r : j.value("k_sweep", json::array())) t.k_sweep.push_back(sweep_row_from_json(r));
  return t;
}

void emit_report(const ReportTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << report_table_json(table).dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

ReportTable parse_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return report_table_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<LabeledImage> render_split(const DatasetManifest& manifest, Split split) {
  const auto records = manifest.split(split);
  FaceRenderer renderer(manifest.n_id, manifest.n_ep);
  std::vector<LabeledImage> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const auto& s = records[i].spec;
    out[i] = {renderer.render(s), s.id, s.ep, s.nuisance};
  });
  return out;
}

}  // namespace stegosan
