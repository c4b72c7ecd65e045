#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "stegosan/nn/layers.hpp"
#include "stegosan/tensor.hpp"

namespace stegosan {

struct DctConfig {
  std::size_t image_size = 64;
  std::size_t block_size = 8;
  float pixel_scale = 255.0f / 2.0f;

  std::size_t blocks_per_side() const { return image_size / block_size; }
  std::size_t frequencies() const { return block_size * block_size; }
  void validate() const;
};

/// (row, col) of each zig-zag index in an n x n block, JPEG ordering.
std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t n);

/// n^2 x n^2 orthonormal 2-D DCT-II basis. Row f is the basis image of the
/// frequency with zig-zag index f, flattened row-major over the block.
Tensor dct_basis(std::size_t n);

/// Per-block transforms on one flattened n x n block, using a float basis
/// from dct_basis. The inverse is the single code path every pixel-domain
/// reconstruction goes through, so re-running it reproduces pixels exactly.
void dct_block(const Tensor& basis, std::span<const float> block, std::span<double> coeffs);
void idct_block(const Tensor& basis, std::span<const double> coeffs, std::span<float> block);

/// One channel (N x N or N x N x 1) -> (N/n) x (N/n) x n^2.
Tensor blockwise_dct(const Tensor& channel, const DctConfig& cfg);
/// (N/n) x (N/n) x n^2 -> N x N x 1.
Tensor blockwise_idct(const Tensor& coeffs, const DctConfig& cfg);

/// N x N x C image -> (N/n) x (N/n) x (n^2 * C), channel index f * C + c,
/// multiplied by `scale`. Coefficients are computed in double precision.
std::vector<double> image_dct(const Tensor& image, const DctConfig& cfg, double scale = 1.0);
Tensor image_dct_tensor(const Tensor& image, const DctConfig& cfg, double scale = 1.0);
/// Inverse of image_dct with scale 1, block by block through idct_block.
Tensor image_idct(std::span<const double> coeffs, std::size_t channels, const DctConfig& cfg);

/// Conv2D with n^2 filters of size n x n, stride n, no bias, weights
/// pre-multiplied by pixel_scale; maps one channel to its scaled DCT.
nn::Conv2D build_dct_conv_layer(const DctConfig& cfg);
/// The three per-channel DCT convolutions fused into one conv with
/// block-diagonal structure: C -> n^2 * C channels, output channel f * C + c.
nn::Conv2D build_multichannel_dct_conv_layer(const DctConfig& cfg, std::size_t channels = 3);
/// Transposed convolution inverting the unscaled DCT conv:
/// n^2 * C coefficient channels -> C pixel channels.
nn::TransposedConv2D build_idct_conv_layer(const DctConfig& cfg, std::size_t channels = 1);

}  // namespace stegosan
