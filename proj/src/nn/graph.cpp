#include "stegosan/nn/graph.hpp"

#include <unordered_set>

#include "stegosan/error.hpp"

namespace stegosan::nn {

void NetworkGraph::add_input(const std::string& name, Shape shape) {
  if (name.empty()) throw ConfigError("graph input needs a name");
  if (shapes_.contains(name)) throw ConfigError("duplicate name '" + name + "'");
  for (auto e : shape)
    if (e == 0) throw ShapeError("input '" + name + "' has a zero extent");
  if (shape.empty()) throw ShapeError("input '" + name + "' has no axes");
  inputs_.push_back({name, shape});
  shapes_[name] = std::move(shape);
  last_ = name;
}

void NetworkGraph::add_node(const std::string& name, LayerSpec layer, std::vector<std::string> inputs) {
  if (name.empty()) throw ConfigError("node needs a name");
  if (shapes_.contains(name)) throw ConfigError("duplicate name '" + name + "'");
  std::vector<Shape> in_shapes;
  for (const auto& in : inputs) {
    auto it = shapes_.find(in);
    if (it == shapes_.end()) {
      throw ConfigError("node '" + name + "' references unknown or later node '" + in + "'");
    }
    in_shapes.push_back(it->second);
  }
  Shape out;
  try {
    validate_layer(layer);
    out = infer_shape(layer, in_shapes);
  } catch (const ShapeError& e) {
    throw ShapeError("node '" + name + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("node '" + name + "': " + e.what());
  }
  node_index_[name] = nodes_.size();
  nodes_.push_back({name, std::move(layer), std::move(inputs)});
  shapes_[name] = std::move(out);
  last_ = name;
}

void NetworkGraph::append(const std::string& name, LayerSpec layer) {
  if (last_.empty()) throw ConfigError("append on an empty graph");
  add_node(name, std::move(layer), {last_});
}

void NetworkGraph::set_outputs(std::vector<std::string> outputs) {
  for (const auto& o : outputs)
    if (!shapes_.contains(o)) throw ConfigError("unknown output '" + o + "'");
  outputs_ = std::move(outputs);
}

const Node& NetworkGraph::node(const std::string& name) const { return nodes_.at(node_index(name)); }
Node& NetworkGraph::node(const std::string& name) { return nodes_.at(node_index(name)); }

std::size_t NetworkGraph::node_index(const std::string& name) const {
  auto it = node_index_.find(name);
  if (it == node_index_.end()) throw ConfigError("no node named '" + name + "'");
  return it->second;
}

const Shape& NetworkGraph::shape_of(const std::string& name) const {
  auto it = shapes_.find(name);
  if (it == shapes_.end()) throw ConfigError("no node or input named '" + name + "'");
  return it->second;
}

void NetworkGraph::validate() const {
  if (inputs_.empty()) throw ConfigError("graph has no inputs");
  if (outputs_.empty()) throw ConfigError("graph has no outputs");
  std::unordered_map<std::string, Shape> shapes;
  std::unordered_set<std::string> reachable;
  for (const auto& in : inputs_) {
    shapes[in.name] = in.shape;
    reachable.insert(in.name);
  }
  for (const auto& n : nodes_) {
    std::vector<Shape> in_shapes;
    bool from_input = false;
    for (const auto& in : n.inputs) {
      auto it = shapes.find(in);
      if (it == shapes.end()) throw ConfigError("node '" + n.name + "' input '" + in + "' is not defined earlier");
      in_shapes.push_back(it->second);
      from_input = from_input || reachable.contains(in);
    }
    try {
      validate_layer(n.layer);
      shapes[n.name] = infer_shape(n.layer, in_shapes);
    } catch (const Error& e) {
      throw ShapeError("node '" + n.name + "': " + e.what());
    }
    if (!from_input) throw ConfigError("node '" + n.name + "' is not reachable from any input");
    reachable.insert(n.name);
  }
  for (const auto& o : outputs_)
    if (!reachable.contains(o)) throw ConfigError("output '" + o + "' is not reachable");
}

std::size_t NetworkGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes_)
    for (const Tensor* t : trainable_parameters(node.layer)) n += t->size();
  return n;
}

ForwardTrace forward_trace(const NetworkGraph& net, const TensorMap& inputs) {
  ForwardTrace trace;
  for (const auto& in : net.inputs()) {
    auto it = inputs.find(in.name);
    if (it == inputs.end()) throw ShapeError("missing graph input '" + in.name + "'");
    if (it->second.shape() != in.shape) {
      throw ShapeError("input '" + in.name + "' has shape " + shape_to_string(it->second.shape()) + ", expected " +
                       shape_to_string(in.shape));
    }
    trace.graph_inputs.emplace(in.name, it->second);
  }
  trace.node_outputs.reserve(net.nodes().size());
  for (const auto& node : net.nodes()) {
    std::vector<const Tensor*> args;
    for (const auto& in : node.inputs) {
      auto gi = trace.graph_inputs.find(in);
      args.push_back(gi != trace.graph_inputs.end() ? &gi->second : &trace.node_outputs[net.node_index(in)]);
    }
    try {
      trace.node_outputs.push_back(apply_layer(node.layer, args));
    } catch (const ShapeError& e) {
      throw ShapeError("node '" + node.name + "': " + e.what());
    }
  }
  return trace;
}

TensorMap forward(const NetworkGraph& net, const TensorMap& inputs) {
  ForwardTrace trace = forward_trace(net, inputs);
  TensorMap out;
  for (const auto& name : net.outputs()) {
    auto gi = trace.graph_inputs.find(name);
    out.emplace(name, gi != trace.graph_inputs.end() ? gi->second : trace.node_outputs[net.node_index(name)]);
  }
  return out;
}

Tensor forward_single(const NetworkGraph& net, const Tensor& input) {
  if (net.inputs().size() != 1 || net.outputs().size() != 1) {
    throw ConfigError("forward_single needs exactly one input and one output");
  }
  auto out = forward(net, {{net.inputs().front().name, input}});
  return std::move(out.begin()->second);
}

Gradients Gradients::zeros_like(const NetworkGraph& net) {
  Gradients g;
  g.per_node.reserve(net.nodes().size());
  for (const auto& node : net.nodes()) {
    std::vector<Tensor> ts;
    for (const Tensor* p : trainable_parameters(node.layer)) ts.emplace_back(p->shape(), 0.0f);
    g.per_node.push_back(std::move(ts));
  }
  return g;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t n = 0; n < per_node.size(); ++n)
    for (std::size_t k = 0; k < per_node[n].size(); ++k) {
      float* dst = per_node[n][k].raw();
      const float* src = other.per_node[n][k].raw();
      for (std::size_t i = 0; i < per_node[n][k].size(); ++i) dst[i] += src[i];
    }
}

void Gradients::scale(float factor) {
  for (auto& node : per_node)
    for (auto& t : node)
      for (float& v : t.values()) v *= factor;
}

void backward(const NetworkGraph& net, const ForwardTrace& trace, const TensorMap& output_grads, Gradients& grads) {
  const auto& nodes = net.nodes();
  std::vector<Tensor> node_grads(nodes.size());
  std::vector<bool> live(nodes.size(), false);
  for (const auto& [name, g] : output_grads) {
    if (!net.has_node(name)) continue;  // gradient w.r.t. a graph input: nothing to propagate
    const std::size_t idx = net.node_index(name);
    if (g.shape() != trace.node_outputs[idx].shape()) throw ShapeError("output gradient shape mismatch at " + name);
    node_grads[idx] = g;
    live[idx] = true;
  }
  for (std::size_t idx = nodes.size(); idx-- > 0;) {
    if (!live[idx]) continue;
    const Node& node = nodes[idx];
    std::vector<const Tensor*> args;
    std::vector<Tensor*> arg_grads;
    for (const auto& in : node.inputs) {
      if (net.has_node(in)) {
        const std::size_t j = net.node_index(in);
        args.push_back(&trace.node_outputs[j]);
        if (!live[j]) {
          node_grads[j] = Tensor(trace.node_outputs[j].shape(), 0.0f);
          live[j] = true;
        }
        arg_grads.push_back(&node_grads[j]);
      } else {
        args.push_back(&trace.graph_inputs.at(in));
        arg_grads.push_back(nullptr);
      }
    }
    std::vector<Tensor*> pgrads;
    for (auto& t : grads.per_node[idx]) pgrads.push_back(&t);
    backward_layer(node.layer, args, trace.node_outputs[idx], node_grads[idx], arg_grads, pgrads);
  }
}

}  // namespace stegosan::nn
