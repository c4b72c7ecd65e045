#include "stegosan/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "stegosan/error.hpp"

namespace stegosan::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void expect_shape(const Tensor& t, const Shape& s, const char* what) {
  if (t.shape() != s) {
    throw ShapeError(std::string(what) + " has shape " + shape_to_string(t.shape()) + ", expected " +
                     shape_to_string(s));
  }
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) throw ShapeError("convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

std::size_t tconv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, std::size_t opad) {
  const std::size_t full = (in - 1) * stride + k + opad;
  if (full <= 2 * pad) throw ShapeError("transposed convolution output would be empty");
  return full - 2 * pad;
}

// kh x kw x out x in  ->  kh x kw x in x out, so inner loops run over out.
std::vector<float> transpose_kernel(const Tensor& w, std::size_t kk, std::size_t out, std::size_t in) {
  std::vector<float> t(w.size());
  const float* src = w.raw();
  for (std::size_t k = 0; k < kk; ++k)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) t[(k * in + i) * out + o] = src[(k * out + o) * in + i];
  return t;
}

template <class Conv>
void check_conv_geometry(const Conv& c, const char* what) {
  if (c.kernel_h == 0 || c.kernel_w == 0 || c.in_ch == 0 || c.out_ch == 0) {
    throw ConfigError(std::string(what) + ": zero kernel or channel count");
  }
  if (c.stride < 1) throw ConfigError(std::string(what) + ": stride must be >= 1");
  expect_shape(c.weights, {c.kernel_h, c.kernel_w, c.out_ch, c.in_ch}, "conv weights");
  if (c.bias) expect_shape(*c.bias, {c.out_ch}, "conv bias");
}

Tensor conv_forward(const Conv2D& c, const Tensor& in) {
  const std::size_t ih = in.extent(0), iw = in.extent(1);
  const std::size_t oh = conv_out_extent(ih, c.kernel_h, c.stride, c.padding);
  const std::size_t ow = conv_out_extent(iw, c.kernel_w, c.stride, c.padding);
  const std::size_t ci = c.in_ch, co = c.out_ch;
  const auto wt = transpose_kernel(c.weights, c.kernel_h * c.kernel_w, co, ci);
  Tensor out({oh, ow, co});
  const float* src = in.raw();
  float* dst = out.raw();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      float* o = dst + (oy * ow + ox) * co;
      if (c.bias) std::copy_n(c.bias->raw(), co, o);
      for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
        const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
        for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
          const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.padding);
          if (ix < 0 || ix >= static_cast<long>(iw)) continue;
          const float* x = src + (static_cast<std::size_t>(iy) * iw + static_cast<std::size_t>(ix)) * ci;
          const float* w = wt.data() + (ky * c.kernel_w + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const float xi = x[i];
            const float* wr = w + i * co;
            for (std::size_t j = 0; j < co; ++j) o[j] += xi * wr[j];
          }
        }
      }
    }
  }
  return out;
}

void conv_backward(const Conv2D& c, const Tensor& in, const Tensor& g, Tensor* gin, Tensor* gw, Tensor* gb) {
  const std::size_t ih = in.extent(0), iw = in.extent(1);
  const std::size_t oh = g.extent(0), ow = g.extent(1);
  const std::size_t ci = c.in_ch, co = c.out_ch;
  const float* src = in.raw();
  const float* w = c.weights.raw();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const float* go = g.raw() + (oy * ow + ox) * co;
      if (gb)
        for (std::size_t j = 0; j < co; ++j) (*gb)[j] += go[j];
      for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
        const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
        for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
          const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.padding);
          if (ix < 0 || ix >= static_cast<long>(iw)) continue;
          const std::size_t pix = (static_cast<std::size_t>(iy) * iw + static_cast<std::size_t>(ix)) * ci;
          const std::size_t kbase = (ky * c.kernel_w + kx) * co * ci;
          for (std::size_t j = 0; j < co; ++j) {
            const float gj = go[j];
            if (gj == 0.0f) continue;
            if (gin) {
              float* gi = gin->raw() + pix;
              const float* wr = w + kbase + j * ci;
              for (std::size_t i = 0; i < ci; ++i) gi[i] += gj * wr[i];
            }
            if (gw) {
              float* gwr = gw->raw() + kbase + j * ci;
              const float* x = src + pix;
              for (std::size_t i = 0; i < ci; ++i) gwr[i] += gj * x[i];
            }
          }
        }
      }
    }
  }
}

Tensor tconv_forward(const TransposedConv2D& c, const Tensor& in) {
  const std::size_t ih = in.extent(0), iw = in.extent(1);
  const std::size_t oh = tconv_out_extent(ih, c.kernel_h, c.stride, c.padding, c.output_padding);
  const std::size_t ow = tconv_out_extent(iw, c.kernel_w, c.stride, c.padding, c.output_padding);
  const std::size_t ci = c.in_ch, co = c.out_ch;
  const auto wt = transpose_kernel(c.weights, c.kernel_h * c.kernel_w, co, ci);
  Tensor out({oh, ow, co});
  float* dst = out.raw();
  if (c.bias)
    for (std::size_t p = 0; p < oh * ow; ++p) std::copy_n(c.bias->raw(), co, dst + p * co);
  for (std::size_t iy = 0; iy < ih; ++iy) {
    for (std::size_t ix = 0; ix < iw; ++ix) {
      const float* x = in.raw() + (iy * iw + ix) * ci;
      for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
        const long oy = static_cast<long>(iy * c.stride + ky) - static_cast<long>(c.padding);
        if (oy < 0 || oy >= static_cast<long>(oh)) continue;
        for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
          const long ox = static_cast<long>(ix * c.stride + kx) - static_cast<long>(c.padding);
          if (ox < 0 || ox >= static_cast<long>(ow)) continue;
          float* o = dst + (static_cast<std::size_t>(oy) * ow + static_cast<std::size_t>(ox)) * co;
          const float* w = wt.data() + (ky * c.kernel_w + kx) * ci * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const float xi = x[i];
            const float* wr = w + i * co;
            for (std::size_t j = 0; j < co; ++j) o[j] += xi * wr[j];
          }
        }
      }
    }
  }
  return out;
}

void tconv_backward(const TransposedConv2D& c, const Tensor& in, const Tensor& g, Tensor* gin, Tensor* gw,
                    Tensor* gb) {
  const std::size_t ih = in.extent(0), iw = in.extent(1);
  const std::size_t oh = g.extent(0), ow = g.extent(1);
  const std::size_t ci = c.in_ch, co = c.out_ch;
  const float* w = c.weights.raw();
  if (gb)
    for (std::size_t p = 0; p < oh * ow; ++p)
      for (std::size_t j = 0; j < co; ++j) (*gb)[j] += g[p * co + j];
  for (std::size_t iy = 0; iy < ih; ++iy) {
    for (std::size_t ix = 0; ix < iw; ++ix) {
      const std::size_t pix = (iy * iw + ix) * ci;
      for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
        const long oy = static_cast<long>(iy * c.stride + ky) - static_cast<long>(c.padding);
        if (oy < 0 || oy >= static_cast<long>(oh)) continue;
        for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
          const long ox = static_cast<long>(ix * c.stride + kx) - static_cast<long>(c.padding);
          if (ox < 0 || ox >= static_cast<long>(ow)) continue;
          const float* go = g.raw() + (static_cast<std::size_t>(oy) * ow + static_cast<std::size_t>(ox)) * co;
          const std::size_t kbase = (ky * c.kernel_w + kx) * co * ci;
          for (std::size_t j = 0; j < co; ++j) {
            const float gj = go[j];
            if (gj == 0.0f) continue;
            if (gin) {
              float* gi = gin->raw() + pix;
              const float* wr = w + kbase + j * ci;
              for (std::size_t i = 0; i < ci; ++i) gi[i] += gj * wr[i];
            }
            if (gw) {
              float* gwr = gw->raw() + kbase + j * ci;
              const float* x = in.raw() + pix;
              for (std::size_t i = 0; i < ci; ++i) gwr[i] += gj * x[i];
            }
          }
        }
      }
    }
  }
}

Tensor fc_forward(const FullyConnected& fc, const Tensor& in) {
  Tensor out({fc.out_dim}, 0.0f);
  std::copy_n(fc.bias.raw(), fc.out_dim, out.raw());
  float* o = out.raw();
  const float* w = fc.weights.raw();
  for (std::size_t i = 0; i < fc.in_dim; ++i) {
    const float xi = in[i];
    const float* wr = w + i * fc.out_dim;
    for (std::size_t j = 0; j < fc.out_dim; ++j) o[j] += xi * wr[j];
  }
  return out;
}

void fc_backward(const FullyConnected& fc, const Tensor& in, const Tensor& g, Tensor* gin, Tensor* gw, Tensor* gb) {
  const float* w = fc.weights.raw();
  if (gb)
    for (std::size_t j = 0; j < fc.out_dim; ++j) (*gb)[j] += g[j];
  for (std::size_t i = 0; i < fc.in_dim; ++i) {
    const float* wr = w + i * fc.out_dim;
    if (gin) {
      float acc = 0.0f;
      for (std::size_t j = 0; j < fc.out_dim; ++j) acc += g[j] * wr[j];
      (*gin)[i] += acc;
    }
    if (gw) {
      const float xi = in[i];
      float* gwr = gw->raw() + i * fc.out_dim;
      for (std::size_t j = 0; j < fc.out_dim; ++j) gwr[j] += xi * g[j];
    }
  }
}

std::size_t channel_count(const Tensor& t) { return t.shape().back(); }

Tensor bn_forward(const BatchNormInference& bn, const Tensor& in) {
  const std::size_t ch = channel_count(in);
  std::vector<float> scale(ch), shift(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    scale[c] = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.epsilon);
    shift[c] = bn.beta[c] - scale[c] * bn.running_mean[c];
  }
  Tensor out(in.shape());
  for (std::size_t p = 0; p < in.size(); p += ch)
    for (std::size_t c = 0; c < ch; ++c) out[p + c] = in[p + c] * scale[c] + shift[c];
  return out;
}

void bn_backward(const BatchNormInference& bn, const Tensor& in, const Tensor& g, Tensor* gin, Tensor* ggamma,
                 Tensor* gbeta) {
  const std::size_t ch = channel_count(in);
  std::vector<float> inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1.0f / std::sqrt(bn.running_var[c] + bn.epsilon);
  for (std::size_t p = 0; p < in.size(); p += ch) {
    for (std::size_t c = 0; c < ch; ++c) {
      const float gv = g[p + c];
      if (gin) (*gin)[p + c] += gv * bn.gamma[c] * inv_std[c];
      if (ggamma) (*ggamma)[c] += gv * (in[p + c] - bn.running_mean[c]) * inv_std[c];
      if (gbeta) (*gbeta)[c] += gv;
    }
  }
}

Tensor activation_forward(const Activation& a, const Tensor& in) {
  Tensor out(in.shape());
  const std::size_t n = in.size();
  switch (a.kind) {
    case ActivationKind::LeakyReLU:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : a.alpha * in[i];
      break;
    case ActivationKind::Tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
      break;
    case ActivationKind::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-in[i]));
      break;
    case ActivationKind::Softmax: {
      const float m = *std::max_element(in.values().begin(), in.values().end());
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - m);
        sum += out[i];
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
      break;
    }
  }
  return out;
}

void activation_backward(const Activation& a, const Tensor& in, const Tensor& out, const Tensor& g, Tensor& gin) {
  const std::size_t n = in.size();
  switch (a.kind) {
    case ActivationKind::LeakyReLU:
      for (std::size_t i = 0; i < n; ++i) gin[i] += in[i] > 0.0f ? g[i] : a.alpha * g[i];
      break;
    case ActivationKind::Tanh:
      for (std::size_t i = 0; i < n; ++i) gin[i] += g[i] * (1.0f - out[i] * out[i]);
      break;
    case ActivationKind::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) gin[i] += g[i] * out[i] * (1.0f - out[i]);
      break;
    case ActivationKind::Softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += static_cast<double>(g[i]) * out[i];
      for (std::size_t i = 0; i < n; ++i) gin[i] += out[i] * (g[i] - static_cast<float>(dot));
      break;
    }
  }
}

struct ConcatGeometry {
  std::size_t outer = 1;
  std::vector<std::size_t> chunk;  // per input: extent(axis) * inner
};

ConcatGeometry concat_geometry(std::size_t axis, const std::vector<const Tensor*>& inputs) {
  ConcatGeometry g;
  const Shape& s0 = inputs.front()->shape();
  for (std::size_t d = 0; d < axis; ++d) g.outer *= s0[d];
  for (auto* t : inputs) {
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < t->rank(); ++d) inner *= t->shape()[d];
    g.chunk.push_back(t->shape()[axis] * inner);
  }
  return g;
}

}  // namespace

std::string_view layer_kind_name(const LayerSpec& layer) {
  return std::visit(overloaded{[](const FullyConnected&) { return std::string_view("FullyConnected"); },
                               [](const Conv2D&) { return std::string_view("Conv2D"); },
                               [](const TransposedConv2D&) { return std::string_view("TransposedConv2D"); },
                               [](const BatchNormInference&) { return std::string_view("BatchNormInference"); },
                               [](const Activation&) { return std::string_view("Activation"); },
                               [](const Reshape&) { return std::string_view("Reshape"); },
                               [](const Concat&) { return std::string_view("Concat"); }},
                    layer);
}

void validate_layer(const LayerSpec& layer) {
  std::visit(overloaded{
                 [](const FullyConnected& fc) {
                   if (fc.in_dim == 0 || fc.out_dim == 0) throw ConfigError("FullyConnected: zero dimension");
                   expect_shape(fc.weights, {fc.in_dim, fc.out_dim}, "FC weights");
                   expect_shape(fc.bias, {fc.out_dim}, "FC bias");
                 },
                 [](const Conv2D& c) { check_conv_geometry(c, "Conv2D"); },
                 [](const TransposedConv2D& c) { check_conv_geometry(c, "TransposedConv2D"); },
                 [](const BatchNormInference& bn) {
                   if (bn.gamma.empty() || bn.gamma.rank() != 1) throw ShapeError("BatchNorm gamma must be a vector");
                   const Shape s = bn.gamma.shape();
                   expect_shape(bn.beta, s, "BatchNorm beta");
                   expect_shape(bn.running_mean, s, "BatchNorm running_mean");
                   expect_shape(bn.running_var, s, "BatchNorm running_var");
                   if (!(bn.epsilon > 0.0f)) throw ConfigError("BatchNorm epsilon must be positive");
                   for (float v : bn.running_var.values())
                     if (v < 0.0f) throw ConfigError("BatchNorm running_var must be non-negative");
                 },
                 [](const Activation& a) {
                   if (a.kind == ActivationKind::LeakyReLU && !(a.alpha > 0.0f && a.alpha < 1.0f)) {
                     throw ConfigError("LeakyReLU alpha must lie in (0, 1)");
                   }
                 },
                 [](const Reshape& r) {
                   if (r.target_shape.empty()) throw ShapeError("Reshape target must have at least one axis");
                   for (auto e : r.target_shape)
                     if (e == 0) throw ShapeError("Reshape target extents must be positive");
                 },
                 [](const Concat&) {},
             },
             layer);
}

Shape infer_shape(const LayerSpec& layer, const std::vector<Shape>& inputs) {
  if (inputs.empty()) throw ShapeError("layer has no inputs");
  const bool is_concat = std::holds_alternative<Concat>(layer);
  if (!is_concat && inputs.size() != 1) throw ShapeError("layer takes exactly one input");
  const Shape& in = inputs.front();
  return std::visit(
      overloaded{
          [&](const FullyConnected& fc) -> Shape {
            if (shape_size(in) != fc.in_dim) {
              throw ShapeError("FullyConnected expects " + std::to_string(fc.in_dim) + " inputs, got " +
                               shape_to_string(in));
            }
            return {fc.out_dim};
          },
          [&](const Conv2D& c) -> Shape {
            if (in.size() != 3 || in[2] != c.in_ch) {
              throw ShapeError("Conv2D expects h x w x " + std::to_string(c.in_ch) + ", got " + shape_to_string(in));
            }
            return {conv_out_extent(in[0], c.kernel_h, c.stride, c.padding),
                    conv_out_extent(in[1], c.kernel_w, c.stride, c.padding), c.out_ch};
          },
          [&](const TransposedConv2D& c) -> Shape {
            if (in.size() != 3 || in[2] != c.in_ch) {
              throw ShapeError("TransposedConv2D expects h x w x " + std::to_string(c.in_ch) + ", got " +
                               shape_to_string(in));
            }
            return {tconv_out_extent(in[0], c.kernel_h, c.stride, c.padding, c.output_padding),
                    tconv_out_extent(in[1], c.kernel_w, c.stride, c.padding, c.output_padding), c.out_ch};
          },
          [&](const BatchNormInference& bn) -> Shape {
            if (in.back() != bn.gamma.size()) {
              throw ShapeError("BatchNorm has " + std::to_string(bn.gamma.size()) + " channels, input is " +
                               shape_to_string(in));
            }
            return in;
          },
          [&](const Activation&) -> Shape { return in; },
          [&](const Reshape& r) -> Shape {
            if (shape_size(r.target_shape) != shape_size(in)) {
              throw ShapeError("Reshape " + shape_to_string(in) + " -> " + shape_to_string(r.target_shape));
            }
            return r.target_shape;
          },
          [&](const Concat& c) -> Shape {
            if (c.axis >= in.size()) throw ShapeError("Concat axis out of range");
            Shape out = in;
            out[c.axis] = 0;
            for (const Shape& s : inputs) {
              if (s.size() != in.size()) throw ShapeError("Concat inputs differ in rank");
              for (std::size_t d = 0; d < s.size(); ++d)
                if (d != c.axis && s[d] != in[d]) throw ShapeError("Concat inputs differ off-axis");
              out[c.axis] += s[c.axis];
            }
            return out;
          },
      },
      layer);
}

Tensor apply_layer(const LayerSpec& layer, const std::vector<const Tensor*>& inputs) {
  const Tensor& in = *inputs.front();
  return std::visit(overloaded{
                        [&](const FullyConnected& fc) { return fc_forward(fc, in); },
                        [&](const Conv2D& c) { return conv_forward(c, in); },
                        [&](const TransposedConv2D& c) { return tconv_forward(c, in); },
                        [&](const BatchNormInference& bn) { return bn_forward(bn, in); },
                        [&](const Activation& a) { return activation_forward(a, in); },
                        [&](const Reshape& r) { return in.reshaped(r.target_shape); },
                        [&](const Concat& c) {
                          std::vector<Shape> shapes;
                          for (auto* t : inputs) shapes.push_back(t->shape());
                          Tensor out(infer_shape(layer, shapes));
                          const auto g = concat_geometry(c.axis, inputs);
                          float* dst = out.raw();
                          for (std::size_t o = 0; o < g.outer; ++o)
                            for (std::size_t k = 0; k < inputs.size(); ++k) {
                              dst = std::copy_n(inputs[k]->raw() + o * g.chunk[k], g.chunk[k], dst);
                            }
                          return out;
                        },
                    },
                    layer);
}

std::vector<Tensor*> trainable_parameters(LayerSpec& layer) {
  return std::visit(overloaded{
                        [](FullyConnected& fc) { return std::vector<Tensor*>{&fc.weights, &fc.bias}; },
                        [](Conv2D& c) {
                          std::vector<Tensor*> p{&c.weights};
                          if (c.bias) p.push_back(&*c.bias);
                          return p;
                        },
                        [](TransposedConv2D& c) {
                          std::vector<Tensor*> p{&c.weights};
                          if (c.bias) p.push_back(&*c.bias);
                          return p;
                        },
                        [](BatchNormInference& bn) { return std::vector<Tensor*>{&bn.gamma, &bn.beta}; },
                        [](auto&) { return std::vector<Tensor*>{}; },
                    },
                    layer);
}

std::vector<const Tensor*> trainable_parameters(const LayerSpec& layer) {
  auto ptrs = trainable_parameters(const_cast<LayerSpec&>(layer));
  return {ptrs.begin(), ptrs.end()};
}

void backward_layer(const LayerSpec& layer, const std::vector<const Tensor*>& inputs, const Tensor& output,
                    const Tensor& output_grad, const std::vector<Tensor*>& input_grads,
                    const std::vector<Tensor*>& param_grads) {
  const Tensor& in = *inputs.front();
  Tensor* gin = input_grads.empty() ? nullptr : input_grads.front();
  auto pg = [&](std::size_t k) -> Tensor* { return k < param_grads.size() ? param_grads[k] : nullptr; };
  std::visit(overloaded{
                 [&](const FullyConnected& fc) { fc_backward(fc, in, output_grad, gin, pg(0), pg(1)); },
                 [&](const Conv2D& c) { conv_backward(c, in, output_grad, gin, pg(0), c.bias ? pg(1) : nullptr); },
                 [&](const TransposedConv2D& c) {
                   tconv_backward(c, in, output_grad, gin, pg(0), c.bias ? pg(1) : nullptr);
                 },
                 [&](const BatchNormInference& bn) { bn_backward(bn, in, output_grad, gin, pg(0), pg(1)); },
                 [&](const Activation& a) {
                   if (gin) activation_backward(a, in, output, output_grad, *gin);
                 },
                 [&](const Reshape&) {
                   if (gin)
                     for (std::size_t i = 0; i < gin->size(); ++i) (*gin)[i] += output_grad[i];
                 },
                 [&](const Concat& c) {
                   const auto g = concat_geometry(c.axis, inputs);
                   std::size_t offset = 0;
                   for (std::size_t o = 0; o < g.outer; ++o)
                     for (std::size_t k = 0; k < inputs.size(); ++k) {
                       if (k < input_grads.size() && input_grads[k]) {
                         float* dst = input_grads[k]->raw() + o * g.chunk[k];
                         for (std::size_t i = 0; i < g.chunk[k]; ++i) dst[i] += output_grad[offset + i];
                       }
                       offset += g.chunk[k];
                     }
                 },
             },
             layer);
}

FullyConnected make_fc(std::size_t in_dim, std::size_t out_dim) {
  return FullyConnected{in_dim, out_dim, Tensor({in_dim, out_dim}), Tensor({out_dim})};
}

Conv2D make_conv(std::size_t kernel, std::size_t in_ch, std::size_t out_ch, std::size_t stride, std::size_t padding,
                 bool with_bias) {
  Conv2D c{kernel, kernel, in_ch, out_ch, stride, padding, Tensor({kernel, kernel, out_ch, in_ch}), std::nullopt};
  if (with_bias) c.bias = Tensor({out_ch});
  return c;
}

TransposedConv2D make_tconv(std::size_t kernel, std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                            std::size_t padding, std::size_t output_padding, bool with_bias) {
  TransposedConv2D c{kernel,  kernel,         in_ch, out_ch, stride, padding, output_padding,
                     Tensor({kernel, kernel, out_ch, in_ch}), std::nullopt};
  if (with_bias) c.bias = Tensor({out_ch});
  return c;
}

BatchNormInference make_batchnorm(std::size_t channels, float epsilon) {
  return BatchNormInference{Tensor({channels}, 1.0f), Tensor({channels}, 0.0f), Tensor({channels}, 0.0f),
                            Tensor({channels}, 1.0f), epsilon};
}

Activation leaky_relu(float alpha) { return {ActivationKind::LeakyReLU, alpha}; }
Activation tanh_activation() { return {ActivationKind::Tanh, 0.0f}; }
Activation sigmoid_activation() { return {ActivationKind::Sigmoid, 0.0f}; }
Activation softmax_activation() { return {ActivationKind::Softmax, 0.0f}; }

}  // namespace stegosan::nn
