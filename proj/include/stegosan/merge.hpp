#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stegosan/dct.hpp"
#include "stegosan/nn/graph.hpp"

namespace stegosan {

/// Decoder followed by the three-channel DCT convolution: the shared
/// architecture of the secret generation path S (code_dim = K + |z| + N_id)
/// and the decoding-DCT path T (code_dim = |z| + N_id). Input "code",
/// output "dct" of shape (N/n) x (N/n) x 3n^2.
nn::NetworkGraph build_decoder_dct_path(std::size_t code_dim, const DctConfig& cfg);

/// Interleaves two FC layers with a shared input. Output slots
/// [2wj, 2wj + w) take S's block j and [2wj + w, 2wj + 2w) take T's block j,
/// where w = block_width. T sees the input without its first K entries, so
/// its rows are preceded by K zero rows.
nn::FullyConnected merge_fc(const nn::FullyConnected& s, const nn::FullyConnected& t, std::size_t k,
                            std::size_t block_width = 128);

/// Block-diagonal merge: S occupies (out [0, c_i), in [0, c_{i-1})), T the
/// second halves, cross blocks are zero and biases are concatenated.
nn::Conv2D merge_conv(const nn::Conv2D& s, const nn::Conv2D& t);
nn::TransposedConv2D merge_tconv(const nn::TransposedConv2D& s, const nn::TransposedConv2D& t);
nn::BatchNormInference merge_batchnorm(const nn::BatchNormInference& s, const nn::BatchNormInference& t);

struct MergePlan {
  std::size_t k = 0;
  std::size_t block_width = 128;
  std::vector<std::pair<std::string, std::string>> pairs;  // S node <-> T node
  std::size_t s_input_dim = 0;
  std::size_t t_input_dim = 0;
};

/// Pairs S and T node by node; throws ConfigError unless the architectures
/// match (T's first FC may be narrower by exactly K inputs).
MergePlan plan_merge(const nn::NetworkGraph& s, const nn::NetworkGraph& t, std::size_t k);

nn::NetworkGraph merge_networks(const nn::NetworkGraph& s, const nn::NetworkGraph& t, const MergePlan& plan);

/// Splits a merged network back into its two paths.
std::pair<nn::NetworkGraph, nn::NetworkGraph> split_merged(const nn::NetworkGraph& merged, const MergePlan& plan);

nlohmann::json merge_layout_json(const nn::NetworkGraph& merged, const MergePlan& plan);
MergePlan merge_plan_from_layout(const nlohmann::json& layout);

struct MergeVerification {
  double max_deviation = 0.0;
  std::size_t samples = 0;
  bool pass = false;
};

inline constexpr double kMergeTolerance = 1e-5;

/// Compares the de-interleaved output of M with S and T on `samples`
/// uniform random codes in [-1, 1].
MergeVerification verify_merge(const nn::NetworkGraph& s, const nn::NetworkGraph& t, const nn::NetworkGraph& m,
                               const MergePlan& plan, std::size_t samples, std::uint64_t seed);

/// Pre-computed S/T reference outputs so a merged network can be re-checked
/// cheaply after modification.
struct MergeReference {
  std::vector<Tensor> inputs;
  std::vector<Tensor> s_outputs;
  std::vector<Tensor> t_outputs;
};
MergeReference merge_reference(const nn::NetworkGraph& s, const nn::NetworkGraph& t, const MergePlan& plan,
                               std::size_t samples, std::uint64_t seed);
MergeVerification verify_merge(const MergeReference& ref, const nn::NetworkGraph& m);

struct CrossBlockEntry {
  std::string node;
  std::size_t index = 0;  // flat index into the node's weight tensor
};

/// Weight entries that connect an S channel to a T channel (or the FC_0
/// slice of the input to a T unit). They are zero right after merging.
bool is_cross_block(const nn::LayerSpec& merged_layer, std::size_t index, const MergePlan& plan);
std::size_t count_nonzero_cross_block(const nn::NetworkGraph& merged, const MergePlan& plan);
/// Up to `per_node` seeded random cross-block entries from every merged
/// weight layer.
std::vector<CrossBlockEntry> sample_cross_block_entries(const nn::NetworkGraph& merged, const MergePlan& plan,
                                                        std::size_t per_node, std::uint64_t seed);

}  // namespace stegosan
