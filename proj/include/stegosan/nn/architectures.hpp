#pragma once

#include <cstddef>
#include <vector>

#include "stegosan/nn/graph.hpp"

namespace stegosan::nn {

inline constexpr std::size_t kLatentDim = 128;

/// VAE-GAN encoder: four 5x5 stride-2 conv/BN/LeakyReLU stages
/// (32, 64, 128, 256 channels) ending at 4 x 4 x 256, then the parallel heads
/// FC_0 (K, Sigmoid; omitted when K == 0), FC_1 (mu) and FC_2 (log variance).
/// Input "image"; outputs "fc0" (if present), "mu", "log_var".
NetworkGraph build_encoder(std::size_t k_bits, std::size_t image_size = 64);

/// Decoder: 2048 FC reshaped to 4 x 4 x 128, LeakyReLU, then 5x5 stride-2
/// deconvolutions (256, 128, 64 with BN + LeakyReLU; 3 with Tanh).
/// Input "code" of `code_dim`; output "image".
NetworkGraph build_decoder(std::size_t code_dim);

/// VAE-GAN discriminator with heads D0 (1, Sigmoid), D1 (n_id, Softmax),
/// D2 (n_ep, Softmax). Input "image"; outputs "d0", "d1", "d2".
NetworkGraph build_vaegan_discriminator(std::size_t n_id, std::size_t n_ep, std::size_t image_size = 64);

/// Privacy / utility check discriminator: conv stages with the given widths
/// (5x5, stride 2, BN, LeakyReLU), one hidden FC + LeakyReLU, and a single
/// FC head with Softmax over n_classes. Input "image"; output "probs".
struct CheckDiscriminatorConfig {
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t hidden = 32;
  std::size_t image_size = 64;
};
NetworkGraph build_check_discriminator(std::size_t n_classes, const CheckDiscriminatorConfig& cfg = {});
/// The appendix-scale variant: widths 32/64/128/256 and a 256 FC.
CheckDiscriminatorConfig full_scale_check_config();

}  // namespace stegosan::nn
