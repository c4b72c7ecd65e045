#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stegosan/nn/graph.hpp"

namespace stegosan::nn {

enum class LossKind { CrossEntropy, MeanSquaredError };

struct TrainConfig {
  float learning_rate = 0.05f;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  LossKind loss_kind = LossKind::CrossEntropy;
  /// The batch-mean gradient is rescaled to at most this global L2 norm;
  /// 0 disables clipping.
  float clip_norm = 1.0f;

  void validate() const;
};

struct LabeledSample {
  Tensor input;
  std::size_t label = 0;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  NetworkGraph net;
  std::vector<EpochStats> history;
};

/// Glorot-uniform initialisation of every FC/conv weight (bias zero), seeded.
void init_weights(NetworkGraph& net, std::uint64_t seed);

/// Sets each BatchNorm node's running statistics from the activations it sees
/// on `samples` (processed node by node in topological order), then freezes
/// them. Uses at most `max_samples` samples.
void warm_up_batchnorm(NetworkGraph& net, const std::vector<LabeledSample>& samples, std::size_t max_samples = 256);

/// Minibatch SGD on a single-input graph whose only output is a Softmax over
/// n_classes. Works on a private copy; `net` is untouched. Minibatches are
/// split into a fixed number of chunks so results do not depend on the number
/// of worker threads.
TrainResult train_classifier(const NetworkGraph& net, const std::vector<LabeledSample>& dataset,
                             const TrainConfig& cfg);

std::size_t predict_class(const NetworkGraph& net, const Tensor& input);
std::vector<float> predict_proba(const NetworkGraph& net, const Tensor& input);

/// Loss on one output tensor. Cross-entropy takes the class in `label`
/// (probabilities are clamped at 1e-12); MSE takes `target` and averages over
/// elements.
struct LossSpec {
  LossKind kind = LossKind::MeanSquaredError;
  std::size_t label = 0;
  Tensor target;
};

double loss_value(const LossSpec& loss, const Tensor& output);
Tensor loss_gradient(const LossSpec& loss, const Tensor& output);

struct GradientBlockReport {
  std::string node;
  std::size_t param_index = 0;
  std::size_t probes = 0;
  double deviation = 0.0;  // max |bp - fd| / max(max |fd|, max |bp|, 1e-8)
};

struct GradientCheckReport {
  std::vector<GradientBlockReport> blocks;
  double max_deviation = 0.0;
};

struct GradientCheckOptions {
  float step = 1e-2f;
  std::size_t probes_per_block = 16;
  std::uint64_t seed = 7;
};

/// Compares backprop parameter gradients with central finite differences on
/// a sample of entries from every parameter block.
GradientCheckReport gradient_check(const NetworkGraph& net, const TensorMap& inputs, const LossSpec& loss,
                                   const GradientCheckOptions& opts = {});

}  // namespace stegosan::nn
