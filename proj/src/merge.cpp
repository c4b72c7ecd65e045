#include "stegosan/merge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stegosan/error.hpp"
#include "stegosan/nn/architectures.hpp"
#include "stegosan/parallel.hpp"
#include "stegosan/rng.hpp"

namespace stegosan {

using nlohmann::json;
using namespace stegosan::nn;

NetworkGraph build_decoder_dct_path(std::size_t code_dim, const DctConfig& cfg) {
  if (cfg.image_size != 64) throw ConfigError("the decoder produces 64 x 64 images");
  NetworkGraph net = build_decoder(code_dim);
  net.append("dct", build_multichannel_dct_conv_layer(cfg, 3));
  net.set_outputs({"dct"});
  return net;
}

FullyConnected merge_fc(const FullyConnected& s, const FullyConnected& t, std::size_t k, std::size_t w) {
  if (s.in_dim != t.in_dim + k) {
    throw ShapeError("merge_fc: S input (" + std::to_string(s.in_dim) + ") must equal T input (" +
                     std::to_string(t.in_dim) + ") + K (" + std::to_string(k) + ")");
  }
  if (s.out_dim != t.out_dim || w == 0 || s.out_dim % w != 0) throw ShapeError("merge_fc: output widths differ");
  const std::size_t out = s.out_dim, blocks = out / w, mout = 2 * out;
  FullyConnected m = make_fc(s.in_dim, mout);
  for (std::size_t j = 0; j < blocks; ++j) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t src = w * j + c, ds = 2 * w * j + c, dt = 2 * w * j + w + c;
      for (std::size_t r = 0; r < s.in_dim; ++r) {
        m.weights[r * mout + ds] = s.weights[r * out + src];
        m.weights[r * mout + dt] = r < k ? 0.0f : t.weights[(r - k) * out + src];
      }
      m.bias[ds] = s.bias[src];
      m.bias[dt] = t.bias[src];
    }
  }
  return m;
}

namespace {

template <typename ConvT>
void check_pair(const ConvT& s, const ConvT& t, const char* what) {
  if (s.kernel_h != t.kernel_h || s.kernel_w != t.kernel_w || s.in_ch != t.in_ch || s.out_ch != t.out_ch ||
      s.stride != t.stride || s.padding != t.padding || s.bias.has_value() != t.bias.has_value()) {
    throw ShapeError(std::string(what) + ": S and T geometries differ");
  }
}

template <typename ConvT>
void fill_block_diagonal(const ConvT& s, const ConvT& t, ConvT& m) {
  const std::size_t taps = s.kernel_h * s.kernel_w, co = s.out_ch, ci = s.in_ch;
  for (std::size_t k = 0; k < taps; ++k)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ci; ++i) {
        const float ws = s.weights[(k * co + o) * ci + i], wt = t.weights[(k * co + o) * ci + i];
        m.weights[(k * 2 * co + o) * 2 * ci + i] = ws;
        m.weights[(k * 2 * co + co + o) * 2 * ci + ci + i] = wt;
      }
  if (s.bias) {
    for (std::size_t o = 0; o < co; ++o) {
      (*m.bias)[o] = (*s.bias)[o];
      (*m.bias)[co + o] = (*t.bias)[o];
    }
  }
}

template <typename ConvT>
ConvT diagonal_block(const ConvT& m, bool second) {
  ConvT out = m;
  const std::size_t taps = m.kernel_h * m.kernel_w, co = m.out_ch / 2, ci = m.in_ch / 2;
  out.in_ch = ci;
  out.out_ch = co;
  out.weights = Tensor({m.kernel_h, m.kernel_w, co, ci});
  const std::size_t oo = second ? co : 0, io = second ? ci : 0;
  for (std::size_t k = 0; k < taps; ++k)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < ci; ++i) out.weights[(k * co + o) * ci + i] = m.weights[(k * m.out_ch + oo + o) * m.in_ch + io + i];
  if (m.bias) {
    out.bias = Tensor({co});
    for (std::size_t o = 0; o < co; ++o) (*out.bias)[o] = (*m.bias)[oo + o];
  }
  return out;
}

Tensor concat_vec(const Tensor& a, const Tensor& b) {
  std::vector<float> v = a.values();
  v.insert(v.end(), b.data().begin(), b.data().end());
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor half_vec(const Tensor& a, bool second) {
  const std::size_t h = a.size() / 2;
  std::vector<float> v(a.data().begin() + (second ? h : 0), a.data().begin() + (second ? a.size() : h));
  return Tensor({h}, std::move(v));
}

bool is_input_fc(const NetworkGraph& net, const Node& node) {
  return std::holds_alternative<FullyConnected>(node.layer) && node.inputs.size() == 1 &&
         !net.has_node(node.inputs.front());
}

}  // namespace

Conv2D merge_conv(const Conv2D& s, const Conv2D& t) {
  check_pair(s, t, "merge_conv");
  Conv2D m = make_conv(s.kernel_h, 2 * s.in_ch, 2 * s.out_ch, s.stride, s.padding, s.bias.has_value());
  m.kernel_w = s.kernel_w;
  m.weights = Tensor({s.kernel_h, s.kernel_w, 2 * s.out_ch, 2 * s.in_ch});
  fill_block_diagonal(s, t, m);
  return m;
}

TransposedConv2D merge_tconv(const TransposedConv2D& s, const TransposedConv2D& t) {
  check_pair(s, t, "merge_tconv");
  if (s.output_padding != t.output_padding) throw ShapeError("merge_tconv: output padding differs");
  TransposedConv2D m =
      make_tconv(s.kernel_h, 2 * s.in_ch, 2 * s.out_ch, s.stride, s.padding, s.output_padding, s.bias.has_value());
  m.kernel_w = s.kernel_w;
  m.weights = Tensor({s.kernel_h, s.kernel_w, 2 * s.out_ch, 2 * s.in_ch});
  fill_block_diagonal(s, t, m);
  return m;
}

BatchNormInference merge_batchnorm(const BatchNormInference& s, const BatchNormInference& t) {
  if (s.gamma.size() != t.gamma.size() || s.epsilon != t.epsilon) throw ShapeError("merge_batchnorm: mismatch");
  return {concat_vec(s.gamma, t.gamma), concat_vec(s.beta, t.beta), concat_vec(s.running_mean, t.running_mean),
          concat_vec(s.running_var, t.running_var), s.epsilon};
}

MergePlan plan_merge(const NetworkGraph& s, const NetworkGraph& t, std::size_t k) {
  if (s.inputs().size() != 1 || t.inputs().size() != 1) throw ConfigError("merge: paths need exactly one input");
  if (s.nodes().size() != t.nodes().size()) throw ConfigError("merge: paths have different depths");
  if (s.outputs().size() != 1 || t.outputs().size() != 1) throw ConfigError("merge: paths need exactly one output");
  MergePlan plan;
  plan.k = k;
  const auto& s_in = s.inputs().front().shape;
  const auto& t_in = t.inputs().front().shape;
  if (s_in.size() != 1 || t_in.size() != 1) throw ConfigError("merge: shared input must be a vector");
  plan.s_input_dim = s_in[0];
  plan.t_input_dim = t_in[0];
  if (plan.s_input_dim != plan.t_input_dim + k) throw ConfigError("merge: S input must be T input + K");

  bool saw_input_fc = false;
  for (std::size_t i = 0; i < s.nodes().size(); ++i) {
    const Node& a = s.nodes()[i];
    const Node& b = t.nodes()[i];
    if (a.layer.index() != b.layer.index()) {
      throw ConfigError("merge: node " + a.name + " (" + std::string(layer_kind_name(a.layer)) + ") pairs with " +
                        b.name + " (" + std::string(layer_kind_name(b.layer)) + ")");
    }
    if (a.inputs.size() != 1 || b.inputs.size() != 1) throw ConfigError("merge: only chain architectures are supported");
    if (is_input_fc(s, a)) {
      if (saw_input_fc || !is_input_fc(t, b)) throw ConfigError("merge: expected one input FC in each path");
      saw_input_fc = true;
      // The reshape that follows fixes the channel width of each FC block.
      if (i + 1 < s.nodes().size())
        if (const auto* r = std::get_if<Reshape>(&s.nodes()[i + 1].layer)) plan.block_width = r->target_shape.back();
    } else {
      if (std::holds_alternative<FullyConnected>(a.layer)) throw ConfigError("merge: only the input FC can be merged");
      if (std::holds_alternative<Concat>(a.layer)) throw ConfigError("merge: Concat nodes are not supported");
      if (s.shape_of(a.name) != t.shape_of(b.name)) throw ConfigError("merge: shapes differ at node " + a.name);
      if (const auto* act = std::get_if<Activation>(&a.layer)) {
        const auto& bt = std::get<Activation>(b.layer);
        if (act->kind != bt.kind || act->alpha != bt.alpha) throw ConfigError("merge: activations differ at " + a.name);
        if (act->kind == ActivationKind::Softmax) throw ConfigError("merge: Softmax mixes channels");
      }
    }
    plan.pairs.emplace_back(a.name, b.name);
  }
  if (!saw_input_fc) throw ConfigError("merge: no FC layer reads the shared input");
  return plan;
}

NetworkGraph merge_networks(const NetworkGraph& s, const NetworkGraph& t, const MergePlan& plan) {
  if (plan.pairs.size() != s.nodes().size() || plan.pairs.size() != t.nodes().size()) {
    throw ConfigError("merge: plan does not cover every layer");
  }
  NetworkGraph m;
  const std::string input = s.inputs().front().name;
  m.add_input(input, {plan.s_input_dim});
  for (const auto& [sn, tn] : plan.pairs) {
    const Node& a = s.node(sn);
    const Node& b = t.node(tn);
    LayerSpec merged = std::visit(
        [&](const auto& la) -> LayerSpec {
          using L = std::decay_t<decltype(la)>;
          const auto& lb = std::get<L>(b.layer);
          if constexpr (std::is_same_v<L, FullyConnected>) {
            return merge_fc(la, lb, plan.k, plan.block_width);
          } else if constexpr (std::is_same_v<L, Conv2D>) {
            return merge_conv(la, lb);
          } else if constexpr (std::is_same_v<L, TransposedConv2D>) {
            return merge_tconv(la, lb);
          } else if constexpr (std::is_same_v<L, BatchNormInference>) {
            return merge_batchnorm(la, lb);
          } else if constexpr (std::is_same_v<L, Reshape>) {
            Reshape r = la;
            r.target_shape.back() *= 2;
            return r;
          } else if constexpr (std::is_same_v<L, Activation>) {
            return la;
          } else {
            throw ConfigError("merge: unsupported layer kind");
          }
        },
        a.layer);
    m.add_node(sn, std::move(merged), a.inputs);
  }
  m.set_outputs(s.outputs());
  return m;
}

std::pair<NetworkGraph, NetworkGraph> split_merged(const NetworkGraph& merged, const MergePlan& plan) {
  NetworkGraph s, t;
  const std::string input = merged.inputs().front().name;
  s.add_input(input, {plan.s_input_dim});
  t.add_input(input, {plan.t_input_dim});
  for (const auto& [sn, tn] : plan.pairs) {
    const Node& node = merged.node(sn);
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, FullyConnected>) {
            const std::size_t w = plan.block_width, out = l.out_dim / 2, blocks = out / w;
            FullyConnected fs = make_fc(plan.s_input_dim, out), ft = make_fc(plan.t_input_dim, out);
            for (std::size_t j = 0; j < blocks; ++j)
              for (std::size_t c = 0; c < w; ++c) {
                const std::size_t dst = w * j + c, ms = 2 * w * j + c, mt = ms + w;
                for (std::size_t r = 0; r < l.in_dim; ++r) {
                  fs.weights[r * out + dst] = l.weights[r * l.out_dim + ms];
                  if (r >= plan.k) ft.weights[(r - plan.k) * out + dst] = l.weights[r * l.out_dim + mt];
                }
                fs.bias[dst] = l.bias[ms];
                ft.bias[dst] = l.bias[mt];
              }
            s.add_node(sn, fs, node.inputs);
            t.add_node(tn, ft, node.inputs);
          } else if constexpr (std::is_same_v<L, Conv2D> || std::is_same_v<L, TransposedConv2D>) {
            s.add_node(sn, diagonal_block(l, false), node.inputs);
            t.add_node(tn, diagonal_block(l, true), node.inputs);
          } else if constexpr (std::is_same_v<L, BatchNormInference>) {
            s.add_node(sn, BatchNormInference{half_vec(l.gamma, false), half_vec(l.beta, false),
                                              half_vec(l.running_mean, false), half_vec(l.running_var, false), l.epsilon},
                       node.inputs);
            t.add_node(tn, BatchNormInference{half_vec(l.gamma, true), half_vec(l.beta, true),
                                              half_vec(l.running_mean, true), half_vec(l.running_var, true), l.epsilon},
                       node.inputs);
          } else if constexpr (std::is_same_v<L, Reshape>) {
            Reshape r = l;
            r.target_shape.back() /= 2;
            s.add_node(sn, r, node.inputs);
            t.add_node(tn, r, node.inputs);
          } else {
            s.add_node(sn, l, node.inputs);
            t.add_node(tn, l, node.inputs);
          }
        },
        node.layer);
  }
  s.set_outputs(merged.outputs());
  t.set_outputs(merged.outputs());
  return {std::move(s), std::move(t)};
}

json merge_layout_json(const NetworkGraph& merged, const MergePlan& plan) {
  json layers = json::array();
  for (const auto& [sn, tn] : plan.pairs) {
    const Shape& shape = merged.shape_of(sn);
    const std::size_t c = shape.back();
    json entry = {{"node", sn}, {"t_node", tn}, {"kind", layer_kind_name(merged.node(sn).layer)}};
    if (std::holds_alternative<FullyConnected>(merged.node(sn).layer)) {
      entry["layout"] = "interleaved";
      entry["blocks"] = c / (2 * plan.block_width);
      entry["block_width"] = plan.block_width;
    } else {
      entry["layout"] = "halves";
      entry["s_channels"] = json::array({0, c / 2});
      entry["t_channels"] = json::array({c / 2, c});
    }
    layers.push_back(entry);
  }
  return {{"k", plan.k},
          {"block_width", plan.block_width},
          {"s_input_dim", plan.s_input_dim},
          {"t_input_dim", plan.t_input_dim},
          {"t_input_offset", plan.k},
          {"layers", layers}};
}

MergePlan merge_plan_from_layout(const json& j) {
  try {
    MergePlan p;
    p.k = j.at("k").get<std::size_t>();
    p.block_width = j.at("block_width").get<std::size_t>();
    p.s_input_dim = j.at("s_input_dim").get<std::size_t>();
    p.t_input_dim = j.at("t_input_dim").get<std::size_t>();
    for (const auto& l : j.at("layers")) p.pairs.emplace_back(l.at("node").get<std::string>(), l.at("t_node").get<std::string>());
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed merge layout: ") + e.what());
  }
}

MergeReference merge_reference(const NetworkGraph& s, const NetworkGraph& t, const MergePlan& plan,
                               std::size_t samples, std::uint64_t seed) {
  MergeReference ref;
  const std::size_t ns = std::max<std::size_t>(samples, 1);
  ref.inputs.resize(ns);
  ref.s_outputs.resize(ns);
  ref.t_outputs.resize(ns);
  for (std::size_t i = 0; i < ns; ++i) {
    SplitMix64 rng(derive_seed(seed, i));
    Tensor x({plan.s_input_dim});
    for (float& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    ref.inputs[i] = std::move(x);
  }
  parallel_for(ns, [&](std::size_t i) {
    const Tensor& x = ref.inputs[i];
    std::vector<float> xt(x.data().begin() + static_cast<std::ptrdiff_t>(plan.k), x.data().end());
    ref.s_outputs[i] = forward_single(s, x);
    ref.t_outputs[i] = forward_single(t, Tensor({plan.t_input_dim}, std::move(xt)));
  });
  return ref;
}

MergeVerification verify_merge(const MergeReference& ref, const NetworkGraph& m) {
  MergeVerification v;
  v.samples = ref.inputs.size();
  std::vector<double> dev(ref.inputs.size(), 0.0);
  parallel_for(ref.inputs.size(), [&](std::size_t i) {
    const Tensor y = forward_single(m, ref.inputs[i]);
    const Tensor& ys = ref.s_outputs[i];
    const Tensor& yt = ref.t_outputs[i];
    const std::size_t c = ys.shape().back();
    if (y.shape().back() != 2 * c || y.size() != 2 * ys.size()) throw ShapeError("verify_merge: output shapes differ");
    double d = 0.0;
    for (std::size_t p = 0; p < ys.size() / c; ++p)
      for (std::size_t k = 0; k < c; ++k) {
        d = std::max(d, std::fabs(static_cast<double>(y[p * 2 * c + k]) - ys[p * c + k]));
        d = std::max(d, std::fabs(static_cast<double>(y[p * 2 * c + c + k]) - yt[p * c + k]));
      }
    dev[i] = std::isfinite(d) ? d : std::numeric_limits<double>::infinity();
  });
  for (double d : dev) v.max_deviation = std::max(v.max_deviation, d);
  v.pass = v.max_deviation < kMergeTolerance;
  return v;
}

MergeVerification verify_merge(const NetworkGraph& s, const NetworkGraph& t, const NetworkGraph& m,
                               const MergePlan& plan, std::size_t samples, std::uint64_t seed) {
  return verify_merge(merge_reference(s, t, plan, samples, seed), m);
}

bool is_cross_block(const LayerSpec& layer, std::size_t index, const MergePlan& plan) {
  return std::visit(
      [&](const auto& l) -> bool {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, FullyConnected>) {
          const std::size_t r = index / l.out_dim, col = index % l.out_dim;
          return r < plan.k && (col / plan.block_width) % 2 == 1;
        } else if constexpr (std::is_same_v<L, Conv2D> || std::is_same_v<L, TransposedConv2D>) {
          const std::size_t i = index % l.in_ch, o = (index / l.in_ch) % l.out_ch;
          return (o < l.out_ch / 2) != (i < l.in_ch / 2);
        } else {
          return false;
        }
      },
      layer);
}

std::size_t count_nonzero_cross_block(const NetworkGraph& merged, const MergePlan& plan) {
  std::size_t n = 0;
  for (const auto& node : merged.nodes()) {
    const auto params = trainable_parameters(node.layer);
    if (params.empty() || std::holds_alternative<BatchNormInference>(node.layer)) continue;
    const Tensor& w = *params.front();
    for (std::size_t i = 0; i < w.size(); ++i) n += w[i] != 0.0f && is_cross_block(node.layer, i, plan);
  }
  return n;
}

std::vector<CrossBlockEntry> sample_cross_block_entries(const NetworkGraph& merged, const MergePlan& plan,
                                                        std::size_t per_node, std::uint64_t seed) {
  std::vector<CrossBlockEntry> out;
  for (std::size_t idx = 0; idx < merged.nodes().size(); ++idx) {
    const Node& node = merged.nodes()[idx];
    const auto params = trainable_parameters(node.layer);
    if (params.empty() || std::holds_alternative<BatchNormInference>(node.layer)) continue;
    const std::size_t size = params.front()->size();
    SplitMix64 rng(derive_seed(seed, idx));
    std::size_t found = 0;
    for (std::size_t attempt = 0; found < per_node && attempt < 64 * per_node; ++attempt) {
      const auto i = static_cast<std::size_t>(rng.below(size));
      if (!is_cross_block(node.layer, i, plan)) continue;
      out.push_back({node.name, i});
      ++found;
    }
  }
  return out;
}

}  // namespace stegosan
