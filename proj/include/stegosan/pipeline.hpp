#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stegosan/data.hpp"
#include "stegosan/dct.hpp"
#include "stegosan/merge.hpp"
#include "stegosan/nn/graph.hpp"
#include "stegosan/stego.hpp"

namespace stegosan {

// ---- VAE sampling block ----

struct GaussianLatent {
  std::vector<float> mu;
  std::vector<float> log_var;
};

/// mu + exp(log_var / 2) * eps with eps drawn from SplitMix64(seed).
std::vector<float> sample_latent(const GaussianLatent& lat, std::uint64_t seed);
/// KL(N(mu, exp(log_var)) || N(0, 1)), summed over coordinates.
double kl_divergence(const GaussianLatent& lat);

// ---- Loss evaluators ----

struct LossWeights {
  double d0 = 1.0, d1 = 1.0, d2 = 1.0;
  double g0 = 1.0, g1 = 1.0, g2 = 1.0, g3 = 1.0;
  void validate() const;
};
nlohmann::json loss_weights_to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

inline constexpr double kLogClamp = 1e-12;

/// Discriminator outputs for one batch. real_* are taken on input images,
/// fake_* on generator outputs G(I, c). Class-probability rows are
/// per sample.
struct DiscriminatorOutputs {
  std::vector<double> d0_real, d0_fake;
  std::vector<std::vector<double>> d1_real, d2_real;
  std::vector<std::vector<double>> d1_fake, d2_fake;
  std::vector<std::size_t> y_id, y_ep, target_c;
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> terms;  // already weighted
  bool clamped = false;     // some probability hit the log clamp
  bool saturated = false;   // some 1 - p term was clamped (generator fully fooling D)
};

/// The discriminators' objective: real/fake, input-ID and input-expression
/// log-likelihood terms, batch means.
LossBreakdown loss_discriminator(const DiscriminatorOutputs& out, const LossWeights& w);
/// The generator's objective: log(1 - D(G)) for the three discriminators
/// (at target c and the input expression) plus the weighted KL term.
LossBreakdown loss_generator(const DiscriminatorOutputs& out, const std::vector<GaussianLatent>& latents,
                             const LossWeights& w);

// ---- Sanitizers ----

struct LabeledImage {
  Tensor image;  // 64 x 64 x 3 in [-1, 1]
  std::size_t y_id = 0;
  std::size_t y_ep = 0;
  std::optional<Nuisance> nuisance;  // known for synthetic images; feeds the scheme-2 code
};

enum class SanitizerKind { Reference, Network };

inline constexpr std::array<std::size_t, 8> kScheme2Lengths{18, 24, 30, 36, 42, 48, 54, 60};

struct SanitizerConfig {
  SanitizerKind kind = SanitizerKind::Reference;
  int scheme = 1;
  std::size_t k = 8;
  std::size_t m_pool = 32;
  std::size_t n_id = 8;
  std::size_t n_ep = 7;
  DctConfig dct;
  LossWeights lambda;
  std::uint64_t latent_seed = 1;
  /// Scheme 1 requires K = N_id, scheme 2 one of kScheme2Lengths. K = 0
  /// (no secret) is accepted for both.
  void validate() const;
};
nlohmann::json sanitizer_config_to_json(const SanitizerConfig& cfg);
SanitizerConfig sanitizer_config_from_json(const nlohmann::json& j);

struct SanitizerModel {
  SanitizerConfig config;
  std::optional<CalibrationTable> calibration;
  // Network kind only.
  nn::NetworkGraph encoder;
  nn::NetworkGraph decoder;

  std::size_t code_dim() const { return nn_latent_dim() + config.n_id; }
  static constexpr std::size_t nn_latent_dim() { return 128; }
};

SanitizerModel make_reference_sanitizer(const SanitizerConfig& cfg, std::optional<CalibrationTable> table = {});
/// Network-kind sanitizer built from the encoder/decoder architectures with
/// seeded random weights.
SanitizerModel make_network_sanitizer(const SanitizerConfig& cfg, std::uint64_t weight_seed,
                                      std::optional<CalibrationTable> table = {});

/// I' = G(I, c). Reference kind re-renders the face with c's identity and the
/// input's expression, without nuisance. Network kind runs encoder, samples
/// the latent with `latent_seed` and decodes concat(z, c).
Tensor honest_sanitize(const SanitizerModel& model, const LabeledImage& img, std::span<const float> c,
                       std::uint64_t latent_seed = 0);

struct AdversarialOutput {
  Tensor sanitized;  // I'
  Tensor stego;      // I'' in [-255, 255]
  Bits secret;
  StegoKey key;
};

/// Secret for the configured scheme: one-hot y_id (scheme 1) or the factor
/// code of the input (scheme 2).
Bits scheme_secret(const SanitizerConfig& cfg, const LabeledImage& img);
AdversarialOutput adversarial_sanitize(const SanitizerModel& model, const LabeledImage& img, std::span<const float> c,
                                       std::uint64_t latent_seed = 0);

// ---- Scheme-2 factor code ----

/// Bit layout of the scheme-2 code: id bits, expression bits, then the
/// nuisance parameters (dx, dy, three brightness offsets) sharing the
/// remaining bits round-robin, each as a signed integer sent MSB-first.
struct FactorCodeLayout {
  std::size_t id_bits = 0;
  std::size_t ep_bits = 0;
  std::array<std::size_t, 5> nuisance_bits{};
};
FactorCodeLayout factor_code_layout(std::size_t k, std::size_t n_id, std::size_t n_ep);
Bits encode_factor_code(const FaceSpec& spec, std::size_t k, std::size_t n_id, std::size_t n_ep);
FaceSpec decode_factor_code(const Bits& bits, std::size_t n_id, std::size_t n_ep);
/// Signed mid-tread quantizer over [-range, range] with `bits` bits; zero
/// code maps to zero.
std::int64_t quantize_signed(double value, double range, std::size_t bits);
double dequantize_signed(std::int64_t code, double range, std::size_t bits);

// ---- Recovery ----

struct RecoveryLabels {
  std::size_t y_ep = 0;
  std::size_t y_id = 0;  // the classified identity of I'', which should equal c
};

/// Labels from the expression and ID classifiers (inputs are I'' / 255).
RecoveryLabels classify_labels(const nn::NetworkGraph& id_net, const nn::NetworkGraph& ep_net, const Tensor& stego,
                               const DctConfig& cfg);

struct Scheme1Recovery {
  std::size_t y_id = 0;
  Bits bits;
  bool low_confidence = false;  // extracted bits were not one-hot
};

Scheme1Recovery recover_scheme1(const Tensor& stego, const RecoveryLabels& labels, const CalibrationTable& table,
                                const SanitizerConfig& cfg, ExtractMode mode = ExtractMode::Nearest);

struct Scheme2Recovery {
  Bits bits;
  FaceSpec spec;
  Tensor reconstruction;
  std::optional<double> mse;
};

/// The reference decoder re-renders the face from the decoded factor code.
Scheme2Recovery recover_scheme2(const Tensor& stego, const RecoveryLabels& labels, const CalibrationTable& table,
                                const SanitizerConfig& cfg, const std::optional<Tensor>& original = {},
                                ExtractMode mode = ExtractMode::Nearest);

// ---- Network form of the embedding ----

/// 1x1 convolution mapping the merged [S | round(T)] coefficient channels to
/// 2 * T + S, followed by the inverse-DCT transposed convolution.
nn::NetworkGraph build_embedding_tail(const DctConfig& cfg);
/// Runs the tail on a secret matrix and unrounded scaled coefficients, the
/// two halves a merged network produces.
Tensor network_embed(const nn::NetworkGraph& tail, const Tensor& secret_matrix, const Tensor& scaled_coeffs,
                     const DctConfig& cfg);

// ---- Bundles ----

/// Directory holding config.json, calibration.json (if present) and, for the
/// network kind, encoder.sgsn and decoder.sgsn.
void save_bundle(const SanitizerModel& model, const std::string& dir);
SanitizerModel load_bundle(const std::string& dir);

/// Calibrated random network pair for merging: decoder-DCT path with
/// seeded weights and batch-norm statistics measured on random codes.
nn::NetworkGraph random_decoder_dct_path(std::size_t code_dim, const DctConfig& cfg, std::uint64_t seed);

}  // namespace stegosan
