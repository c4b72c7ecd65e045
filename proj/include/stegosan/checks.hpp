#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stegosan/nn/architectures.hpp"
#include "stegosan/nn/train.hpp"
#include "stegosan/pipeline.hpp"

namespace stegosan {

enum class CheckKind { Weak, Strong, Utility };
std::string check_name(CheckKind kind);
CheckKind check_from_name(const std::string& name);

/// A sanitizer as seen by the checks: maps (input image, target identity
/// index) to an image in [-1, 1]. Must be safe to call concurrently.
struct NamedSanitizer {
  std::string name;
  std::string digest;
  std::function<Tensor(const LabeledImage&, std::size_t)> run;
};

/// Honest output I', or for the adversarial sanitizer I'' / (2 * pixel_scale)
/// clamped to [-1, 1].
NamedSanitizer make_check_sanitizer(const SanitizerModel& model, bool adversarial);
NamedSanitizer pass_through_sanitizer();
/// Reference sanitizer that also overwrites the expression with `ep`.
NamedSanitizer fixed_expression_sanitizer(std::size_t n_id, std::size_t n_ep, std::size_t ep, std::size_t size = 64);

struct CheckConfig {
  nn::CheckDiscriminatorConfig disc;
  nn::TrainConfig train{0.05f, 4, 32, 1, nn::LossKind::CrossEntropy, 1.0f};
  std::uint64_t seed = 1;
  std::size_t n_id = 8;
  std::size_t n_ep = 7;
  bool shuffle_train_labels = false;  // destroys the signal; for sanity runs
};
nlohmann::json check_config_json(const CheckConfig& cfg);

struct CheckReport {
  CheckKind check = CheckKind::Weak;
  std::string sanitizer;
  std::string sanitizer_digest;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double accuracy = 0.0;
  double chance = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::uint64_t seed = 0;
  nlohmann::json disc_cfg;
};

/// Target identity index drawn for image `index` of a split, from the
/// check's own seed.
std::size_t check_target(std::uint64_t seed, bool train_split, std::size_t index, std::size_t n_id);

/// Discriminators see images after 8-bit storage.
Tensor check_input(const Tensor& image);

nn::NetworkGraph train_check_discriminator(const std::vector<nn::LabeledSample>& samples, std::size_t n_classes,
                                           const CheckConfig& cfg);

/// Weak check: discriminator trained on (I_train, y_id), tested on
/// G(I_test, c). One discriminator serves every listed sanitizer.
std::vector<CheckReport> run_weak_checks(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                                         const std::vector<NamedSanitizer>& sanitizers, const CheckConfig& cfg);
CheckReport run_weak_check(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                           const NamedSanitizer& sanitizer, const CheckConfig& cfg);
/// Strong check: discriminator trained on (G(I_train, c), y_id).
CheckReport run_strong_check(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                             const NamedSanitizer& sanitizer, const CheckConfig& cfg);
/// Utility check: expression discriminator trained on (G(I_train, c), y_ep).
CheckReport run_utility_check(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                              const NamedSanitizer& sanitizer, const CheckConfig& cfg);
CheckReport run_check(CheckKind kind, const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                      const NamedSanitizer& sanitizer, const CheckConfig& cfg);

/// One row of the latent-length sweep.
struct SweepRow {
  std::size_t k = 0;
  std::size_t n_images = 0;
  double latent_bit_accuracy = 0.0;
  double image_recons_mse = 0.0;
};

/// Latent-bit accuracy and reconstruction MSE of scheme 2 for each K.
std::vector<SweepRow> sweep_k(const std::vector<LabeledImage>& images, const CalibrationTable& table,
                              const std::vector<std::size_t>& ks, const SanitizerConfig& base, std::uint64_t seed,
                              bool quantize = false);

nlohmann::json report_to_json(const CheckReport& r);
CheckReport report_from_json(const nlohmann::json& j);
nlohmann::json sweep_row_to_json(const SweepRow& r);
SweepRow sweep_row_from_json(const nlohmann::json& j);

struct ReportTable {
  std::vector<CheckReport> checks;
  std::vector<SweepRow> k_sweep;
};
nlohmann::json report_table_json(const ReportTable& table);
ReportTable report_table_from_json(const nlohmann::json& j);
void emit_report(const ReportTable& table, const std::string& path);
ReportTable parse_report(const std::string& path);

/// Labeled images for a dataset split, rendered in memory.
std::vector<LabeledImage> render_split(const DatasetManifest& manifest, Split split);

}  // namespace stegosan
