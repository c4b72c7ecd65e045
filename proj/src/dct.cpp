#include "stegosan/dct.hpp"

#include <cmath>
#include <numbers>

#include "stegosan/error.hpp"

namespace stegosan {

void DctConfig::validate() const {
  if (block_size < 2) throw ConfigError("block size must be >= 2");
  if (image_size == 0 || image_size % block_size != 0) throw ConfigError("block size must divide image size");
  if (!(pixel_scale > 0.0f) || !std::isfinite(pixel_scale)) throw ConfigError("pixel_scale must be > 0");
}

std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  order.reserve(n * n);
  for (std::size_t s = 0; s < 2 * n - 1; ++s) {
    const std::size_t lo = s < n ? 0 : s - n + 1;
    const std::size_t hi = s < n ? s : n - 1;
    // Even diagonals run bottom-left to top-right, odd ones the other way.
    if (s % 2 == 0) {
      for (std::size_t r = hi + 1; r-- > lo;) order.emplace_back(r, s - r);
    } else {
      for (std::size_t r = lo; r <= hi; ++r) order.emplace_back(r, s - r);
    }
  }
  return order;
}

Tensor dct_basis(std::size_t n) {
  if (n < 2) throw ConfigError("block size must be >= 2");
  const auto zz = zigzag_order(n);
  Tensor basis({n * n, n * n});
  const double pi = std::numbers::pi;
  auto alpha = [n](std::size_t k) { return k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n); };
  for (std::size_t f = 0; f < n * n; ++f) {
    const auto [u, v] = zz[f];
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double val = alpha(u) * alpha(v) * std::cos((2.0 * y + 1.0) * u * pi / (2.0 * n)) *
                           std::cos((2.0 * x + 1.0) * v * pi / (2.0 * n));
        basis[f * n * n + y * n + x] = static_cast<float>(val);
      }
  }
  return basis;
}

void dct_block(const Tensor& basis, std::span<const float> block, std::span<double> coeffs) {
  const std::size_t m = block.size();
  for (std::size_t f = 0; f < m; ++f) {
    const float* row = basis.raw() + f * m;
    double s = 0.0;
    for (std::size_t p = 0; p < m; ++p) s += static_cast<double>(row[p]) * block[p];
    coeffs[f] = s;
  }
}

void idct_block(const Tensor& basis, std::span<const double> coeffs, std::span<float> block) {
  const std::size_t m = block.size();
  for (std::size_t p = 0; p < m; ++p) {
    double s = 0.0;
    for (std::size_t f = 0; f < m; ++f) s += static_cast<double>(basis[f * m + p]) * coeffs[f];
    block[p] = static_cast<float>(s);
  }
}

namespace {

void check_channel(const Tensor& channel, const DctConfig& cfg) {
  cfg.validate();
  const auto& s = channel.shape();
  const bool ok = (s.size() == 2 || (s.size() == 3 && s[2] == 1)) && s[0] == s[1];
  if (!ok) throw ShapeError("expected a square single-channel image, got " + shape_to_string(s));
  if (s[0] % cfg.block_size != 0) throw ShapeError("image extent not divisible by block size");
}

void check_image(const Tensor& image, const DctConfig& cfg) {
  cfg.validate();
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != cfg.image_size || s[1] != cfg.image_size) {
    throw ShapeError("expected " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                     "xC image, got " + shape_to_string(s));
  }
}

}  // namespace

Tensor blockwise_dct(const Tensor& channel, const DctConfig& cfg) {
  check_channel(channel, cfg);
  const std::size_t side = channel.extent(0), n = cfg.block_size, m = n * n, b = side / n;
  const Tensor basis = dct_basis(n);
  Tensor out({b, b, m});
  std::vector<float> block(m);
  std::vector<double> coeffs(m);
  for (std::size_t by = 0; by < b; ++by)
    for (std::size_t bx = 0; bx < b; ++bx) {
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) block[y * n + x] = channel[(by * n + y) * side + bx * n + x];
      dct_block(basis, block, coeffs);
      for (std::size_t f = 0; f < m; ++f) out[(by * b + bx) * m + f] = static_cast<float>(coeffs[f]);
    }
  return out;
}

Tensor blockwise_idct(const Tensor& coeffs, const DctConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.block_size, m = n * n;
  const auto& s = coeffs.shape();
  if (s.size() != 3 || s[0] != s[1] || s[2] != m) {
    throw ShapeError("expected B x B x " + std::to_string(m) + " coefficients, got " + shape_to_string(s));
  }
  const std::size_t b = s[0], side = b * n;
  const Tensor basis = dct_basis(n);
  Tensor out({side, side, 1});
  std::vector<double> c(m);
  std::vector<float> block(m);
  for (std::size_t by = 0; by < b; ++by)
    for (std::size_t bx = 0; bx < b; ++bx) {
      for (std::size_t f = 0; f < m; ++f) c[f] = coeffs[(by * b + bx) * m + f];
      idct_block(basis, c, block);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) out[(by * n + y) * side + bx * n + x] = block[y * n + x];
    }
  return out;
}

std::vector<double> image_dct(const Tensor& image, const DctConfig& cfg, double scale) {
  check_image(image, cfg);
  const std::size_t n = cfg.block_size, m = n * n, b = cfg.blocks_per_side(), side = cfg.image_size;
  const std::size_t ch = image.extent(2);
  const Tensor basis = dct_basis(n);
  std::vector<double> out(b * b * m * ch);
  std::vector<float> block(m);
  std::vector<double> coeffs(m);
  for (std::size_t by = 0; by < b; ++by)
    for (std::size_t bx = 0; bx < b; ++bx)
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t x = 0; x < n; ++x) block[y * n + x] = image[((by * n + y) * side + bx * n + x) * ch + c];
        dct_block(basis, block, coeffs);
        for (std::size_t f = 0; f < m; ++f) out[((by * b + bx) * m + f) * ch + c] = coeffs[f] * scale;
      }
  return out;
}

Tensor image_dct_tensor(const Tensor& image, const DctConfig& cfg, double scale) {
  const auto c = image_dct(image, cfg, scale);
  const std::size_t b = cfg.blocks_per_side();
  Tensor out({b, b, cfg.frequencies() * image.extent(2)});
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = static_cast<float>(c[i]);
  return out;
}

Tensor image_idct(std::span<const double> coeffs, std::size_t channels, const DctConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.block_size, m = n * n, b = cfg.blocks_per_side(), side = cfg.image_size;
  if (channels == 0 || coeffs.size() != b * b * m * channels) throw ShapeError("coefficient count mismatch");
  const Tensor basis = dct_basis(n);
  Tensor out({side, side, channels});
  std::vector<double> c(m);
  std::vector<float> block(m);
  for (std::size_t by = 0; by < b; ++by)
    for (std::size_t bx = 0; bx < b; ++bx)
      for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t f = 0; f < m; ++f) c[f] = coeffs[((by * b + bx) * m + f) * channels + ch];
        idct_block(basis, c, block);
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t x = 0; x < n; ++x) out[((by * n + y) * side + bx * n + x) * channels + ch] = block[y * n + x];
      }
  return out;
}

nn::Conv2D build_dct_conv_layer(const DctConfig& cfg) { return build_multichannel_dct_conv_layer(cfg, 1); }

nn::Conv2D build_multichannel_dct_conv_layer(const DctConfig& cfg, std::size_t channels) {
  cfg.validate();
  const std::size_t n = cfg.block_size, m = n * n;
  const Tensor basis = dct_basis(n);
  nn::Conv2D conv = nn::make_conv(n, channels, m * channels, n, 0, false);
  const std::size_t out_ch = m * channels;
  for (std::size_t ky = 0; ky < n; ++ky)
    for (std::size_t kx = 0; kx < n; ++kx)
      for (std::size_t f = 0; f < m; ++f)
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t o = f * channels + c;
          conv.weights[((ky * n + kx) * out_ch + o) * channels + c] = cfg.pixel_scale * basis[f * m + ky * n + kx];
        }
  return conv;
}

nn::TransposedConv2D build_idct_conv_layer(const DctConfig& cfg, std::size_t channels) {
  cfg.validate();
  const std::size_t n = cfg.block_size, m = n * n, in_ch = m * channels;
  const Tensor basis = dct_basis(n);
  nn::TransposedConv2D tconv = nn::make_tconv(n, in_ch, channels, n, 0, 0, false);
  for (std::size_t ky = 0; ky < n; ++ky)
    for (std::size_t kx = 0; kx < n; ++kx)
      for (std::size_t f = 0; f < m; ++f)
        for (std::size_t c = 0; c < channels; ++c) {
          tconv.weights[((ky * n + kx) * channels + c) * in_ch + f * channels + c] = basis[f * m + ky * n + kx];
        }
  return tconv;
}

}  // namespace stegosan
