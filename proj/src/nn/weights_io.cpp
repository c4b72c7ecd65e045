#include "stegosan/nn/weights_io.hpp"

#include <bit>

#include "stegosan/checksum.hpp"
#include "stegosan/error.hpp"

namespace stegosan::nn {
namespace {

constexpr std::string_view kMagic = "SGSN";

enum class Tag : std::uint8_t {
  FullyConnected = 1,
  Conv2D = 2,
  TransposedConv2D = 3,
  BatchNorm = 4,
  Activation = 5,
  Reshape = 6,
  Concat = 7,
};

std::uint32_t u32_of(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw FormatError("value does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

void write_shape(ByteWriter& w, const Shape& s) {
  w.u32(u32_of(s.size()));
  for (auto e : s) w.u32(u32_of(e));
}

Shape read_shape(ByteReader& r) {
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape s(rank);
  for (auto& e : s) {
    e = r.u32();
    if (e == 0) throw FormatError("zero tensor extent");
  }
  return s;
}

void write_tensor(ByteWriter& w, const Tensor& t) {
  write_shape(w, t.shape());
  for (float v : t.data()) w.f32(v);
}

Tensor read_tensor(ByteReader& r) {
  Shape s = read_shape(r);
  const std::size_t n = shape_size(s);
  if (n * 4 > r.remaining()) throw FormatError("tensor data truncated");
  std::vector<float> data(n);
  for (auto& v : data) v = r.f32();
  return Tensor(std::move(s), std::move(data));
}

struct Encoded {
  Tag tag;
  std::vector<std::uint32_t> hyper;
  std::vector<const Tensor*> tensors;
};

Encoded encode(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> Encoded {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, FullyConnected>) {
          return {Tag::FullyConnected, {u32_of(l.in_dim), u32_of(l.out_dim)}, {&l.weights, &l.bias}};
        } else if constexpr (std::is_same_v<L, Conv2D> || std::is_same_v<L, TransposedConv2D>) {
          Encoded e{std::is_same_v<L, Conv2D> ? Tag::Conv2D : Tag::TransposedConv2D,
                    {u32_of(l.kernel_h), u32_of(l.kernel_w), u32_of(l.in_ch), u32_of(l.out_ch), u32_of(l.stride),
                     u32_of(l.padding), l.bias ? 1u : 0u},
                    {&l.weights}};
          if constexpr (std::is_same_v<L, TransposedConv2D>) e.hyper.push_back(u32_of(l.output_padding));
          if (l.bias) e.tensors.push_back(&*l.bias);
          return e;
        } else if constexpr (std::is_same_v<L, BatchNormInference>) {
          return {Tag::BatchNorm,
                  {std::bit_cast<std::uint32_t>(l.epsilon)},
                  {&l.gamma, &l.beta, &l.running_mean, &l.running_var}};
        } else if constexpr (std::is_same_v<L, Activation>) {
          return {Tag::Activation, {static_cast<std::uint32_t>(l.kind), std::bit_cast<std::uint32_t>(l.alpha)}, {}};
        } else if constexpr (std::is_same_v<L, Reshape>) {
          Encoded e{Tag::Reshape, {}, {}};
          for (auto d : l.target_shape) e.hyper.push_back(u32_of(d));
          return e;
        } else {
          return {Tag::Concat, {u32_of(l.axis)}, {}};
        }
      },
      layer);
}

void expect_counts(const std::vector<std::uint32_t>& hyper, std::size_t nh, const std::vector<Tensor>& tensors,
                   std::size_t nt, const char* kind) {
  if (hyper.size() != nh || tensors.size() != nt) {
    throw FormatError(std::string("malformed ") + kind + " record");
  }
}

LayerSpec decode(Tag tag, const std::vector<std::uint32_t>& h, std::vector<Tensor> t) {
  switch (tag) {
    case Tag::FullyConnected: {
      expect_counts(h, 2, t, 2, "FullyConnected");
      return FullyConnected{h[0], h[1], std::move(t[0]), std::move(t[1])};
    }
    case Tag::Conv2D:
    case Tag::TransposedConv2D: {
      const bool transposed = tag == Tag::TransposedConv2D;
      const std::size_t nh = transposed ? 8 : 7;
      if (h.size() != nh) throw FormatError("malformed convolution record");
      const bool has_bias = h[6] != 0;
      expect_counts(h, nh, t, has_bias ? 2 : 1, "convolution");
      std::optional<Tensor> bias;
      if (has_bias) bias = std::move(t[1]);
      if (transposed) return TransposedConv2D{h[0], h[1], h[2], h[3], h[4], h[5], h[7], std::move(t[0]), bias};
      return Conv2D{h[0], h[1], h[2], h[3], h[4], h[5], std::move(t[0]), bias};
    }
    case Tag::BatchNorm: {
      expect_counts(h, 1, t, 4, "BatchNorm");
      return BatchNormInference{std::move(t[0]), std::move(t[1]), std::move(t[2]), std::move(t[3]),
                                std::bit_cast<float>(h[0])};
    }
    case Tag::Activation: {
      expect_counts(h, 2, t, 0, "Activation");
      if (h[0] > 3) throw FormatError("unknown activation kind");
      return Activation{static_cast<ActivationKind>(h[0]), std::bit_cast<float>(h[1])};
    }
    case Tag::Reshape: {
      if (h.empty() || !t.empty()) throw FormatError("malformed Reshape record");
      return Reshape{Shape(h.begin(), h.end())};
    }
    case Tag::Concat: {
      expect_counts(h, 1, t, 0, "Concat");
      return Concat{h[0]};
    }
  }
  throw FormatError("unknown layer kind tag " + std::to_string(static_cast<int>(tag)));
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const NetworkGraph& net) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u16(kWeightFormatVersion);
  w.u32(u32_of(net.nodes().size()));
  for (const auto& node : net.nodes()) {
    w.str(node.name);
    const Encoded e = encode(node.layer);
    w.u8(static_cast<std::uint8_t>(e.tag));
    w.u32(u32_of(node.inputs.size()));
    for (const auto& in : node.inputs) w.str(in);
    w.u32(u32_of(e.hyper.size()));
    for (auto v : e.hyper) w.u32(v);
    w.u32(u32_of(e.tensors.size()));
    for (const Tensor* t : e.tensors) write_tensor(w, *t);
  }
  w.u32(u32_of(net.inputs().size()));
  for (const auto& in : net.inputs()) {
    w.str(in.name);
    write_shape(w, in.shape);
  }
  w.u32(u32_of(net.outputs().size()));
  for (const auto& o : net.outputs()) w.str(o);
  seal_with_crc(w.buffer());
  return std::move(w.buffer());
}

NetworkGraph deserialize_weights(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(open_sealed(bytes));
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError("not a weight file (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kWeightFormatVersion) throw FormatError("unsupported weight format version " + std::to_string(version));

  struct Pending {
    std::string name;
    LayerSpec layer;
    std::vector<std::string> inputs;
  };
  std::vector<Pending> layers;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Pending p;
    p.name = r.str();
    const auto tag = static_cast<Tag>(r.u8());
    const std::uint32_t n_in = r.u32();
    if (n_in > r.remaining()) throw FormatError("input list truncated");
    for (std::uint32_t k = 0; k < n_in; ++k) p.inputs.push_back(r.str());
    const std::uint32_t nh = r.u32();
    if (nh > r.remaining() / 4) throw FormatError("hyperparameter list truncated");
    std::vector<std::uint32_t> hyper(nh);
    for (auto& v : hyper) v = r.u32();
    const std::uint32_t nt = r.u32();
    if (nt > 8) throw FormatError("too many tensors in one layer");
    std::vector<Tensor> tensors;
    for (std::uint32_t k = 0; k < nt; ++k) tensors.push_back(read_tensor(r));
    p.layer = decode(tag, hyper, std::move(tensors));
    layers.push_back(std::move(p));
  }

  NetworkGraph net;
  const std::uint32_t n_inputs = r.u32();
  for (std::uint32_t i = 0; i < n_inputs; ++i) {
    std::string name = r.str();
    net.add_input(name, read_shape(r));
  }
  for (auto& p : layers) net.add_node(p.name, std::move(p.layer), std::move(p.inputs));
  const std::uint32_t n_outputs = r.u32();
  std::vector<std::string> outputs;
  for (std::uint32_t i = 0; i < n_outputs; ++i) outputs.push_back(r.str());
  net.set_outputs(std::move(outputs));
  if (r.remaining() != 0) throw FormatError("trailing bytes after weight payload");
  return net;
}

void save_weights(const NetworkGraph& net, const std::string& path) { write_file(path, serialize_weights(net)); }

NetworkGraph load_weights(const std::string& path) { return deserialize_weights(read_file(path)); }

}  // namespace stegosan::nn
