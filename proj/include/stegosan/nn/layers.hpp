#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stegosan/tensor.hpp"

namespace stegosan::nn {

/// Dense layer. `weights` is in_dim x out_dim, so output j = bias[j] +
/// sum_i x[i] * weights[i][j]. The input may have any shape whose element
/// count is in_dim; the output is a vector of out_dim.
struct FullyConnected {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Tensor weights;
  Tensor bias;
};

/// 2-D convolution over an h x w x in_ch tensor. Weights are laid out
/// kernel_h x kernel_w x out_ch x in_ch. Padding is symmetric zero padding.
struct Conv2D {
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t in_ch = 0, out_ch = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weights;
  std::optional<Tensor> bias;
};

/// Transposed convolution (the adjoint of Conv2D with the same geometry).
/// Output extent = (in - 1) * stride - 2 * padding + kernel + output_padding.
struct TransposedConv2D {
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t in_ch = 0, out_ch = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;
  Tensor weights;
  std::optional<Tensor> bias;
};

/// Per-channel affine normalisation over the last axis using frozen running
/// statistics. gamma and beta train; running_mean/var do not.
struct BatchNormInference {
  Tensor gamma, beta, running_mean, running_var;
  float epsilon = 1e-3f;
};

enum class ActivationKind : std::uint8_t { LeakyReLU = 0, Tanh = 1, Sigmoid = 2, Softmax = 3 };

struct Activation {
  ActivationKind kind = ActivationKind::LeakyReLU;
  float alpha = 0.2f;  // LeakyReLU only
};

struct Reshape {
  Shape target_shape;
};

struct Concat {
  std::size_t axis = 0;
};

using LayerSpec =
    std::variant<FullyConnected, Conv2D, TransposedConv2D, BatchNormInference, Activation, Reshape, Concat>;

std::string_view layer_kind_name(const LayerSpec& layer);

/// Validates internal consistency (weight shapes vs declared dims, stride,
/// alpha range). Throws ShapeError / ConfigError.
void validate_layer(const LayerSpec& layer);

/// Output shape for the given input shapes; throws ShapeError on mismatch.
Shape infer_shape(const LayerSpec& layer, const std::vector<Shape>& inputs);

Tensor apply_layer(const LayerSpec& layer, const std::vector<const Tensor*>& inputs);

/// Trainable parameter tensors, in a fixed order (weights, bias / gamma, beta).
std::vector<Tensor*> trainable_parameters(LayerSpec& layer);
std::vector<const Tensor*> trainable_parameters(const LayerSpec& layer);

/// Backward pass of one layer. `output` is the forward result for `inputs`.
/// Writes input gradients into `input_grads[k]` when that pointer is non-null
/// and accumulates parameter gradients into `param_grads` (same order as
/// trainable_parameters).
void backward_layer(const LayerSpec& layer, const std::vector<const Tensor*>& inputs, const Tensor& output,
                    const Tensor& output_grad, const std::vector<Tensor*>& input_grads,
                    const std::vector<Tensor*>& param_grads);

// Builders with zero-filled weights and geometry checks.
FullyConnected make_fc(std::size_t in_dim, std::size_t out_dim);
Conv2D make_conv(std::size_t kernel, std::size_t in_ch, std::size_t out_ch, std::size_t stride, std::size_t padding,
                 bool with_bias = true);
TransposedConv2D make_tconv(std::size_t kernel, std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                            std::size_t padding, std::size_t output_padding, bool with_bias = true);
BatchNormInference make_batchnorm(std::size_t channels, float epsilon = 1e-3f);
Activation leaky_relu(float alpha = 0.2f);
Activation tanh_activation();
Activation sigmoid_activation();
Activation softmax_activation();

}  // namespace stegosan::nn
