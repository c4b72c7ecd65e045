#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "stegosan/nn/layers.hpp"
#include "stegosan/tensor.hpp"

namespace stegosan::nn {

using TensorMap = std::map<std::string, Tensor>;

struct Node {
  std::string name;
  LayerSpec layer;
  std::vector<std::string> inputs;
};

struct GraphInput {
  std::string name;
  Shape shape;
};

/// A DAG of named layers. Nodes are appended in topological order: every
/// node's inputs must already exist as a graph input or an earlier node, which
/// rules out cycles by construction. Shapes are inferred on insertion.
class NetworkGraph {
 public:
  void add_input(const std::string& name, Shape shape);
  void add_node(const std::string& name, LayerSpec layer, std::vector<std::string> inputs);
  /// Convenience for single-input chains: input is the previously added node.
  void append(const std::string& name, LayerSpec layer);
  void set_outputs(std::vector<std::string> outputs);

  const std::vector<GraphInput>& inputs() const noexcept { return inputs_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::vector<Node>& mutable_nodes() noexcept { return nodes_; }
  const std::vector<std::string>& outputs() const noexcept { return outputs_; }

  const Node& node(const std::string& name) const;
  Node& node(const std::string& name);
  bool has_node(const std::string& name) const { return node_index_.contains(name); }
  std::size_t node_index(const std::string& name) const;
  const Shape& shape_of(const std::string& name) const;

  /// Re-checks every invariant: layer validity, shape inference, outputs
  /// reachable from an input. Throws on the first violation (naming the node).
  void validate() const;

  std::size_t parameter_count() const;

 private:
  std::vector<GraphInput> inputs_;
  std::vector<Node> nodes_;
  std::vector<std::string> outputs_;
  std::unordered_map<std::string, std::size_t> node_index_;
  std::unordered_map<std::string, Shape> shapes_;
  std::string last_;
};

/// Activations of every node from one forward pass, indexed like nodes().
struct ForwardTrace {
  std::vector<Tensor> node_outputs;
  TensorMap graph_inputs;
};

/// Pure forward pass: returns the declared outputs.
TensorMap forward(const NetworkGraph& net, const TensorMap& inputs);

/// Forward pass that keeps every intermediate activation for backprop.
ForwardTrace forward_trace(const NetworkGraph& net, const TensorMap& inputs);

/// Convenience for single-input, single-output graphs.
Tensor forward_single(const NetworkGraph& net, const Tensor& input);

/// Parameter gradients, one vector per node in trainable_parameters order.
struct Gradients {
  std::vector<std::vector<Tensor>> per_node;

  static Gradients zeros_like(const NetworkGraph& net);
  void add(const Gradients& other);
  void scale(float factor);
};

/// Backpropagates `output_grads` (keyed by output/node name) through the trace
/// and accumulates parameter gradients into `grads`.
void backward(const NetworkGraph& net, const ForwardTrace& trace, const TensorMap& output_grads, Gradients& grads);

}  // namespace stegosan::nn
