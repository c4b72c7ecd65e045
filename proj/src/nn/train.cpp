#include "stegosan/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "stegosan/error.hpp"
#include "stegosan/parallel.hpp"
#include "stegosan/rng.hpp"

namespace stegosan::nn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(clip_norm >= 0.0f)) throw ConfigError("clip_norm must be >= 0");
}

namespace {

void fill_uniform(Tensor& t, float bound, SplitMix64& rng) {
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
}

const Activation* output_softmax(const NetworkGraph& net) {
  if (net.outputs().size() != 1 || !net.has_node(net.outputs().front())) return nullptr;
  const auto* act = std::get_if<Activation>(&net.node(net.outputs().front()).layer);
  return (act && act->kind == ActivationKind::Softmax) ? act : nullptr;
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void init_weights(NetworkGraph& net, std::uint64_t seed) {
  auto& nodes = net.mutable_nodes();
  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    SplitMix64 rng(derive_seed(seed, idx));
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, FullyConnected>) {
            fill_uniform(layer.weights, std::sqrt(6.0f / static_cast<float>(layer.in_dim + layer.out_dim)), rng);
            layer.bias.fill(0.0f);
          } else if constexpr (std::is_same_v<L, Conv2D> || std::is_same_v<L, TransposedConv2D>) {
            const float area = static_cast<float>(layer.kernel_h * layer.kernel_w);
            fill_uniform(layer.weights, std::sqrt(6.0f / (area * static_cast<float>(layer.in_ch + layer.out_ch))),
                         rng);
            if (layer.bias) layer.bias->fill(0.0f);
          }
        },
        nodes[idx].layer);
  }
}

void warm_up_batchnorm(NetworkGraph& net, const std::vector<LabeledSample>& samples, std::size_t max_samples) {
  if (samples.empty()) return;
  const std::size_t count = std::min(samples.size(), max_samples);
  const std::string input_name = net.inputs().front().name;
  for (std::size_t idx = 0; idx < net.nodes().size(); ++idx) {
    auto* bn = std::get_if<BatchNormInference>(&net.mutable_nodes()[idx].layer);
    if (!bn) continue;
    const std::string& src = net.nodes()[idx].inputs.front();
    const std::size_t ch = bn->gamma.size();
    std::vector<double> sum(ch, 0.0), sq(ch, 0.0);
    std::size_t n = 0;
    for (std::size_t s = 0; s < count; ++s) {
      auto trace = forward_trace(net, {{input_name, samples[s].input}});
      const Tensor& x = net.has_node(src) ? trace.node_outputs[net.node_index(src)] : trace.graph_inputs.at(src);
      for (std::size_t p = 0; p < x.size(); p += ch) {
        for (std::size_t c = 0; c < ch; ++c) {
          sum[c] += x[p + c];
          sq[c] += static_cast<double>(x[p + c]) * x[p + c];
        }
        ++n;
      }
    }
    for (std::size_t c = 0; c < ch; ++c) {
      const double mean = sum[c] / static_cast<double>(n);
      bn->running_mean[c] = static_cast<float>(mean);
      bn->running_var[c] = static_cast<float>(std::max(0.0, sq[c] / static_cast<double>(n) - mean * mean));
    }
  }
}

double loss_value(const LossSpec& loss, const Tensor& output) {
  if (loss.kind == LossKind::CrossEntropy) {
    if (loss.label >= output.size()) throw DataError("label out of range");
    return -std::log(std::max(static_cast<double>(output[loss.label]), 1e-12));
  }
  if (loss.target.shape() != output.shape()) throw ShapeError("MSE target shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = static_cast<double>(output[i]) - loss.target[i];
    s += d * d;
  }
  return s / static_cast<double>(output.size());
}

Tensor loss_gradient(const LossSpec& loss, const Tensor& output) {
  Tensor g(output.shape(), 0.0f);
  if (loss.kind == LossKind::CrossEntropy) {
    g[loss.label] = static_cast<float>(-1.0 / std::max(static_cast<double>(output[loss.label]), 1e-12));
    return g;
  }
  const float scale = 2.0f / static_cast<float>(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = scale * (output[i] - loss.target[i]);
  return g;
}

TrainResult train_classifier(const NetworkGraph& net, const std::vector<LabeledSample>& dataset,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train_classifier: empty dataset");
  if (net.inputs().size() != 1) throw ConfigError("train_classifier: graph must have one input");
  if (!output_softmax(net)) throw ConfigError("train_classifier: graph must end in a single Softmax output");
  const std::string& out_name = net.outputs().front();
  const std::size_t n_classes = shape_size(net.shape_of(out_name));
  for (const auto& s : dataset)
    if (s.label >= n_classes) throw DataError("train_classifier: label " + std::to_string(s.label) + " out of range");

  TrainResult result{net, {}};
  NetworkGraph& model = result.net;
  warm_up_batchnorm(model, dataset);

  const std::string in_name = model.inputs().front().name;
  const std::size_t out_idx = model.node_index(out_name);
  const std::size_t n = dataset.size();
  SplitMix64 order_rng(cfg.seed);
  std::vector<double> sample_loss(n);
  std::vector<unsigned char> sample_hit(n);
  constexpr std::size_t kChunks = 8;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = seeded_permutation(n, order_rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::size_t len = end - start;
      const std::size_t chunks = std::min(kChunks, len);
      std::vector<Gradients> partial(chunks);
      parallel_for(chunks, [&](std::size_t c) {
        partial[c] = Gradients::zeros_like(model);
        for (std::size_t k = start + len * c / chunks; k < start + len * (c + 1) / chunks; ++k) {
          const auto& s = dataset[order[k]];
          auto trace = forward_trace(model, {{in_name, s.input}});
          const Tensor& probs = trace.node_outputs[out_idx];
          LossSpec spec{LossKind::CrossEntropy, s.label, {}};
          sample_loss[order[k]] = loss_value(spec, probs);
          sample_hit[order[k]] = argmax(probs.data()) == s.label;
          backward(model, trace, {{out_name, loss_gradient(spec, probs)}}, partial[c]);
        }
      });
      for (std::size_t c = 1; c < chunks; ++c) partial[0].add(partial[c]);
      float step = cfg.learning_rate / static_cast<float>(len);
      if (cfg.clip_norm > 0.0f) {
        double sq = 0.0;
        for (const auto& node_grads : partial[0].per_node)
          for (const auto& g : node_grads)
            for (float v : g.data()) sq += static_cast<double>(v) * v;
        const double norm = std::sqrt(sq) / static_cast<double>(len);
        if (norm > cfg.clip_norm) step *= static_cast<float>(cfg.clip_norm / norm);
      }
      auto& nodes = model.mutable_nodes();
      for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
        auto params = trainable_parameters(nodes[idx].layer);
        for (std::size_t k = 0; k < params.size(); ++k) {
          float* w = params[k]->raw();
          const float* g = partial[0].per_node[idx][k].raw();
          for (std::size_t i = 0; i < params[k]->size(); ++i) w[i] -= step * g[i];
        }
      }
    }
    EpochStats stats;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      stats.loss += sample_loss[i];
      hits += sample_hit[i];
    }
    stats.loss /= static_cast<double>(n);
    stats.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    result.history.push_back(stats);
  }
  return result;
}

std::vector<float> predict_proba(const NetworkGraph& net, const Tensor& input) {
  const Tensor out = forward_single(net, input);
  return out.values();
}

std::size_t predict_class(const NetworkGraph& net, const Tensor& input) {
  const auto p = predict_proba(net, input);
  return argmax(p);
}

namespace {

// LeakyReLU slope pattern of every activation node, indexed like nodes().
std::vector<std::vector<unsigned char>> leaky_masks(const NetworkGraph& net, const ForwardTrace& trace) {
  std::vector<std::vector<unsigned char>> masks(net.nodes().size());
  for (std::size_t idx = 0; idx < net.nodes().size(); ++idx) {
    const auto& node = net.nodes()[idx];
    const auto* act = std::get_if<Activation>(&node.layer);
    if (!act || act->kind != ActivationKind::LeakyReLU) continue;
    const std::string& src = node.inputs.front();
    const Tensor& x = net.has_node(src) ? trace.node_outputs[net.node_index(src)] : trace.graph_inputs.at(src);
    masks[idx].resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) masks[idx][i] = x[i] > 0.0f;
  }
  return masks;
}

// Forward pass with every LeakyReLU held at the given slope pattern, so the
// output is smooth in the parameters around the point the masks came from.
Tensor masked_output(const NetworkGraph& net, const TensorMap& inputs,
                     const std::vector<std::vector<unsigned char>>& masks, std::size_t out_idx) {
  std::vector<Tensor> outs(out_idx + 1);
  for (std::size_t idx = 0; idx <= out_idx; ++idx) {
    const auto& node = net.nodes()[idx];
    std::vector<const Tensor*> args;
    for (const auto& in : node.inputs) {
      auto gi = inputs.find(in);
      args.push_back(gi != inputs.end() ? &gi->second : &outs[net.node_index(in)]);
    }
    if (!masks[idx].empty()) {
      const float alpha = std::get<Activation>(node.layer).alpha;
      Tensor y = *args.front();
      for (std::size_t i = 0; i < y.size(); ++i)
        if (!masks[idx][i]) y[i] *= alpha;
      outs[idx] = std::move(y);
    } else {
      outs[idx] = apply_layer(node.layer, args);
    }
  }
  return std::move(outs[out_idx]);
}

}  // namespace

GradientCheckReport gradient_check(const NetworkGraph& net, const TensorMap& inputs, const LossSpec& loss,
                                   const GradientCheckOptions& opts) {
  if (net.outputs().empty()) throw ConfigError("gradient_check: graph has no outputs");
  const std::string& out_name = net.outputs().front();
  const std::size_t out_idx = net.node_index(out_name);

  const auto base = forward_trace(net, inputs);
  const auto masks = leaky_masks(net, base);
  Gradients grads = Gradients::zeros_like(net);
  backward(net, base, {{out_name, loss_gradient(loss, base.node_outputs[out_idx])}}, grads);

  NetworkGraph work = net;
  SplitMix64 rng(opts.seed);
  GradientCheckReport report;
  auto& nodes = work.mutable_nodes();
  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    auto params = trainable_parameters(nodes[idx].layer);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = grads.per_node[idx][k];
      GradientBlockReport block{nodes[idx].name, k, 0, 0.0};
      double max_diff = 0.0, max_mag = 1e-8;
      for (; block.probes < std::min(opts.probes_per_block, p.size()); ++block.probes) {
        const auto i = static_cast<std::size_t>(rng.below(p.size()));
        const float orig = p[i];
        p[i] = orig + opts.step;
        const double plus = loss_value(loss, masked_output(work, inputs, masks, out_idx));
        p[i] = orig - opts.step;
        const double minus = loss_value(loss, masked_output(work, inputs, masks, out_idx));
        p[i] = orig;
        const double fd = (plus - minus) / (2.0 * static_cast<double>(opts.step));
        max_diff = std::max(max_diff, std::fabs(fd - g[i]));
        max_mag = std::max({max_mag, std::fabs(fd), std::fabs(static_cast<double>(g[i]))});
      }
      block.deviation = max_diff / max_mag;
      report.max_deviation = std::max(report.max_deviation, block.deviation);
      report.blocks.push_back(block);
    }
  }
  return report;
}

}  // namespace stegosan::nn
