#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stegosan/nn/graph.hpp"

namespace stegosan::nn {

inline constexpr std::uint16_t kWeightFormatVersion = 1;

// Binary layout (all integers little-endian):
//   "SGSN" | u16 version | u32 layer count
//   per layer: u32 len + name | u8 kind tag | u32 n_inputs, (u32 len + name)...
//              | u32 n_hyper, u32... | u32 n_tensors, (u32 rank, u32 extents..., f32 data...)...
//   u32 n_graph_inputs, (name, u32 rank, u32 extents...)... | u32 n_outputs, names...
//   u32 CRC32 of every preceding byte
std::vector<std::uint8_t> serialize_weights(const NetworkGraph& net);
NetworkGraph deserialize_weights(const std::vector<std::uint8_t>& bytes);

void save_weights(const NetworkGraph& net, const std::string& path);
NetworkGraph load_weights(const std::string& path);

}  // namespace stegosan::nn
