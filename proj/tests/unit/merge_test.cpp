#include <doctest.h>

#include "stegosan/error.hpp"
#include "stegosan/merge.hpp"
#include "stegosan/nn/architectures.hpp"
#include "stegosan/nn/train.hpp"
#include "stegosan/pipeline.hpp"
#include "stegosan/rng.hpp"

using namespace stegosan;
using namespace stegosan::nn;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

template <typename L>
L randomized(L layer, std::uint64_t seed) {
  LayerSpec spec = layer;
  for (Tensor* p : trainable_parameters(spec)) *p = random_tensor(p->shape(), seed++, -0.5f, 0.5f);
  return std::get<L>(spec);
}

// A small path with the same layer sequence as the decoder-DCT path.
NetworkGraph small_path(std::size_t code_dim, std::uint64_t seed) {
  NetworkGraph net;
  net.add_input("code", {code_dim});
  net.append("fc", make_fc(code_dim, 4 * 4 * 4));
  net.append("reshape", Reshape{{4, 4, 4}});
  net.append("act0", leaky_relu());
  net.append("up", make_tconv(3, 4, 3, 2, 1, 1));
  net.append("bn", make_batchnorm(3));
  net.append("act1", leaky_relu());
  net.append("out", make_tconv(3, 3, 2, 2, 1, 1));
  net.append("image", tanh_activation());
  net.append("dct", make_conv(2, 2, 4, 2, 0, false));
  net.set_outputs({"dct"});
  init_weights(net, seed);
  for (auto& n : net.mutable_nodes())
    if (auto* bn = std::get_if<BatchNormInference>(&n.layer)) {
      bn->gamma = random_tensor({3}, seed + 1, 0.5f, 1.5f);
      bn->beta = random_tensor({3}, seed + 2, -0.3f, 0.3f);
      bn->running_mean = random_tensor({3}, seed + 3, -0.2f, 0.2f);
      bn->running_var = random_tensor({3}, seed + 4, 0.5f, 1.5f);
    }
  return net;
}

}  // namespace

TEST_CASE("merged FC interleaves the two paths in blocks") {
  const std::size_t k = 3, w = 4;
  const auto s = randomized(make_fc(10, 8), 1);
  const auto t = randomized(make_fc(7, 8), 2);
  const FullyConnected m = merge_fc(s, t, k, w);
  CHECK(m.in_dim == 10);
  CHECK(m.out_dim == 16);
  const Tensor x = random_tensor({10}, 3);
  const Tensor tail({7}, std::vector<float>(x.values().begin() + k, x.values().end()));
  const Tensor ys = apply_layer(s, {&x}), yt = apply_layer(t, {&tail}), ym = apply_layer(m, {&x});
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < w; ++i) {
      CHECK(ym[2 * w * j + i] == ys[w * j + i]);
      CHECK(ym[2 * w * j + w + i] == yt[w * j + i]);
    }
  CHECK_THROWS(merge_fc(s, randomized(make_fc(6, 8), 4), k, w));
}

TEST_CASE("merged convolutions are block diagonal") {
  const auto s = randomized(make_conv(3, 2, 3, 1, 1), 5);
  const auto t = randomized(make_conv(3, 2, 3, 1, 1), 6);
  const Conv2D m = merge_conv(s, t);
  CHECK(m.in_ch == 4);
  CHECK(m.out_ch == 6);
  const Tensor xs = random_tensor({6, 6, 2}, 7), xt = random_tensor({6, 6, 2}, 8);
  Tensor x({6, 6, 4});
  for (std::size_t p = 0; p < 36; ++p)
    for (std::size_t c = 0; c < 2; ++c) {
      x[p * 4 + c] = xs[p * 2 + c];
      x[p * 4 + 2 + c] = xt[p * 2 + c];
    }
  const Tensor ys = apply_layer(s, {&xs}), yt = apply_layer(t, {&xt}), ym = apply_layer(m, {&x});
  float dev = 0.0f;
  for (std::size_t p = 0; p < 36; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      dev = std::max(dev, std::fabs(ym[p * 6 + c] - ys[p * 3 + c]));
      dev = std::max(dev, std::fabs(ym[p * 6 + 3 + c] - yt[p * 3 + c]));
    }
  CHECK(dev < 1e-6f);
  // Every weight linking an S channel with a T channel is zero.
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    const std::size_t in = i % 4, out = (i / 4) % 6;
    if ((in < 2) != (out < 3)) CHECK(m.weights[i] == 0.0f);
  }
  const TransposedConv2D mt = merge_tconv(randomized(make_tconv(3, 2, 3, 2, 1, 1), 9), randomized(make_tconv(3, 2, 3, 2, 1, 1), 10));
  CHECK(mt.in_ch == 4);
  CHECK(mt.out_ch == 6);
  const BatchNormInference bn = merge_batchnorm(make_batchnorm(3), make_batchnorm(3));
  CHECK(bn.gamma.size() == 6);
}

TEST_CASE("merging small paths is exact and splits back") {
  const std::size_t k = 2;
  const NetworkGraph s = small_path(9, 11), t = small_path(7, 12);
  const MergePlan plan = plan_merge(s, t, k);
  CHECK(plan.block_width == 4);
  const NetworkGraph m = merge_networks(s, t, plan);
  CHECK(count_nonzero_cross_block(m, plan) == 0);
  const MergeVerification v = verify_merge(s, t, m, plan, 10, 13);
  CHECK(v.pass);
  CHECK(v.max_deviation < 1e-6);

  const auto [s2, t2] = split_merged(m, plan);
  const Tensor x = random_tensor({9}, 14);
  CHECK(forward_single(s2, x) == forward_single(s, x));

  const MergePlan back = merge_plan_from_layout(merge_layout_json(m, plan));
  CHECK(back.k == plan.k);
  CHECK(back.block_width == plan.block_width);
  CHECK(back.pairs == plan.pairs);

  const MergeReference ref = merge_reference(s, t, plan, 3, 15);
  for (const auto& e : sample_cross_block_entries(m, plan, 3, 16)) {
    CHECK(is_cross_block(m.node(e.node).layer, e.index, plan));
    NetworkGraph broken = m;
    (*trainable_parameters(broken.node(e.node).layer).front())[e.index] += 1e-2f;
    CHECK(count_nonzero_cross_block(broken, plan) == 1);
    CHECK_FALSE(verify_merge(ref, broken).pass);
  }
}

TEST_CASE("mismatched architectures are refused") {
  const NetworkGraph s = small_path(9, 1);
  CHECK_THROWS_AS(plan_merge(s, small_path(8, 2), 2), ConfigError);
  NetworkGraph other;
  other.add_input("code", {7});
  other.append("fc", make_fc(7, 3));
  other.set_outputs({"fc"});
  CHECK_THROWS_AS(plan_merge(s, other, 2), ConfigError);
}

TEST_CASE("the full decoder-DCT pair merges within tolerance") {
  const DctConfig cfg;
  const std::size_t k = 8, code = kLatentDim + 8;
  const NetworkGraph s = random_decoder_dct_path(k + code, cfg, 1);
  const NetworkGraph t = random_decoder_dct_path(code, cfg, 2);
  CHECK(s.shape_of("dct") == Shape{8, 8, 192});
  const MergePlan plan = plan_merge(s, t, k);
  CHECK(plan.block_width == 128);
  const NetworkGraph m = merge_networks(s, t, plan);
  CHECK(m.shape_of(m.outputs().front()) == Shape{8, 8, 384});
  const MergeReference ref = merge_reference(s, t, plan, 2, 3);
  CHECK(verify_merge(ref, m).max_deviation < kMergeTolerance);
  const auto entries = sample_cross_block_entries(m, plan, 1, 4);
  CHECK(entries.size() >= 5);
  NetworkGraph broken = m;
  (*trainable_parameters(broken.node(entries.back().node).layer).front())[entries.back().index] += 1e-2f;
  CHECK_FALSE(verify_merge(ref, broken).pass);
}
