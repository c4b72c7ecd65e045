#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "stegosan/checksum.hpp"
#include "stegosan/error.hpp"
#include "stegosan/nn/architectures.hpp"
#include "stegosan/nn/graph.hpp"
#include "stegosan/nn/train.hpp"
#include "stegosan/nn/weights_io.hpp"
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

void randomize(LayerSpec& layer, std::uint64_t seed) {
  for (Tensor* p : trainable_parameters(layer)) *p = random_tensor(p->shape(), seed++, -0.5f, 0.5f);
}

NetworkGraph toy_classifier() {
  NetworkGraph net;
  net.add_input("x", {2});
  net.append("fc1", make_fc(2, 8));
  net.append("act", leaky_relu());
  net.append("fc2", make_fc(8, 2));
  net.append("probs", softmax_activation());
  net.set_outputs({"probs"});
  return net;
}

std::vector<LabeledSample> separable_points(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<LabeledSample> out;
  while (out.size() < n) {
    const float a = static_cast<float>(rng.uniform(-1.0, 1.0)), b = static_cast<float>(rng.uniform(-1.0, 1.0));
    if (std::fabs(a + b) < 0.2f) continue;
    out.push_back({Tensor({2}, {a, b}), a + b > 0 ? 1u : 0u});
  }
  return out;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3, 4}, 1.5f);
  CHECK(t.size() == 24);
  CHECK(t.extent(2) == 4);
  t.at(1, 2, 3) = 7.0f;
  CHECK(t[23] == 7.0f);
  CHECK(t.reshaped({6, 4})[23] == 7.0f);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  const Tensor ch = channel_slice(t, 3);
  CHECK(ch.shape() == Shape{2, 3, 1});
  CHECK(ch.at(1, 2, 0) == 7.0f);
  CHECK(max_abs_diff(t, Tensor({2, 3, 4}, 1.5f)) == doctest::Approx(5.5f));
}

TEST_CASE("splitmix streams are reproducible and permutations are complete") {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  SplitMix64 rng(5);
  auto perm = seeded_permutation(50, rng);
  std::sort(perm.begin(), perm.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(perm == iota);
  // Reference splitmix64 output for state 0.
  SplitMix64 zero(0);
  CHECK(zero.next() == 0xE220A8397B1DCDAFULL);
}

TEST_CASE("fully connected with identity weights is the identity") {
  LayerSpec fc = make_fc(4, 4);
  auto& l = std::get<FullyConnected>(fc);
  for (std::size_t i = 0; i < 4; ++i) l.weights[i * 4 + i] = 1.0f;
  const Tensor x({4}, {0.5f, -1.0f, 2.0f, 3.0f});
  CHECK(apply_layer(fc, {&x}) == x);
}

TEST_CASE("3x3 all-ones convolution sums neighbourhoods") {
  LayerSpec conv = make_conv(3, 1, 1, 1, 0);
  std::get<Conv2D>(conv).weights.fill(1.0f);
  const Tensor ones({5, 5, 1}, 1.0f);
  const Tensor y = apply_layer(conv, {&ones});
  CHECK(y.shape() == Shape{3, 3, 1});
  for (float v : y.data()) CHECK(v == 9.0f);

  LayerSpec padded = make_conv(3, 1, 1, 1, 1);
  std::get<Conv2D>(padded).weights.fill(1.0f);
  const Tensor yp = apply_layer(padded, {&ones});
  CHECK(yp.shape() == Shape{5, 5, 1});
  CHECK(yp.at(0, 0, 0) == 4.0f);
  CHECK(yp.at(0, 2, 0) == 6.0f);
  CHECK(yp.at(2, 2, 0) == 9.0f);
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  // <conv(x), y> == <x, tconv(y)> when both share weights [kh][kw][a][b]
  // with the roles of input and output channels exchanged.
  LayerSpec conv = make_conv(5, 3, 4, 2, 2, false);
  randomize(conv, 11);
  LayerSpec tconv = make_tconv(5, 4, 3, 2, 2, 1, false);
  auto& c = std::get<Conv2D>(conv);
  auto& t = std::get<TransposedConv2D>(tconv);
  // conv weights: [kh][kw][out=4][in=3]; tconv weights: [kh][kw][out=3][in=4]
  for (std::size_t k = 0; k < 25; ++k)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 3; ++i) t.weights[(k * 3 + i) * 4 + o] = c.weights[(k * 4 + o) * 3 + i];
  const Tensor x = random_tensor({16, 16, 3}, 12);
  const Tensor cx = apply_layer(conv, {&x});
  const Tensor y = random_tensor(cx.shape(), 13);
  const Tensor ty = apply_layer(tconv, {&y});
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.size(); ++i) lhs += double(cx[i]) * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * ty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("activations") {
  const Tensor x({5}, {-3.0f, -0.5f, 0.0f, 0.5f, 4.0f});
  const Tensor p = apply_layer(softmax_activation(), {&x});
  double sum = 0.0;
  for (float v : p.data()) {
    CHECK(v > 0.0f);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  const Tensor big({3}, {1000.0f, 999.0f, -1000.0f});
  const Tensor pb = apply_layer(softmax_activation(), {&big});
  CHECK(std::isfinite(pb[0]));
  CHECK(pb[0] + pb[1] + pb[2] == doctest::Approx(1.0f));
  const Tensor l = apply_layer(leaky_relu(0.2f), {&x});
  CHECK(l[0] == doctest::Approx(-0.6f));
  CHECK(l[4] == 4.0f);
  const Tensor s = apply_layer(sigmoid_activation(), {&x});
  CHECK(s[2] == doctest::Approx(0.5f));
  const Tensor th = apply_layer(tanh_activation(), {&x});
  CHECK(th[1] == doctest::Approx(std::tanh(-0.5f)));
}

TEST_CASE("batch norm uses frozen statistics") {
  LayerSpec bn = make_batchnorm(2, 0.0f);
  auto& b = std::get<BatchNormInference>(bn);
  b.running_mean = Tensor({2}, {1.0f, -1.0f});
  b.running_var = Tensor({2}, {4.0f, 1.0f});
  b.gamma = Tensor({2}, {2.0f, 1.0f});
  b.beta = Tensor({2}, {0.5f, 0.0f});
  const Tensor x({1, 1, 2}, {3.0f, 0.0f});
  const Tensor y = apply_layer(bn, {&x});
  CHECK(y[0] == doctest::Approx(2.0f * (3.0f - 1.0f) / 2.0f + 0.5f));
  CHECK(y[1] == doctest::Approx(1.0f));
}

TEST_CASE("graph construction rejects malformed networks") {
  NetworkGraph net;
  net.add_input("x", {4});
  CHECK_THROWS_AS(net.add_node("fc", make_fc(5, 2), {"x"}), ShapeError);
  CHECK_THROWS(net.add_node("fc", make_fc(4, 2), {"missing"}));
  net.add_node("fc", make_fc(4, 2), {"x"});
  CHECK_THROWS_AS(net.add_node("fc", make_fc(2, 2), {"fc"}), ConfigError);
  CHECK_THROWS(net.set_outputs({"nowhere"}));
  LayerSpec bad = make_conv(3, 1, 1, 1, 0);
  std::get<Conv2D>(bad).stride = 0;
  CHECK_THROWS(validate_layer(bad));
}

TEST_CASE("architectures have the documented shapes") {
  const NetworkGraph enc = build_encoder(8);
  CHECK(enc.shape_of("mu") == Shape{kLatentDim});
  CHECK(enc.shape_of("log_var") == Shape{kLatentDim});
  CHECK(enc.shape_of("fc0") == Shape{8});
  bool saw_4x4x256 = false;
  for (const auto& n : enc.nodes()) saw_4x4x256 |= enc.shape_of(n.name) == Shape{4, 4, 256};
  CHECK(saw_4x4x256);
  CHECK_FALSE(build_encoder(0).has_node("fc0"));
  const NetworkGraph dec = build_decoder(kLatentDim + 8);
  CHECK(dec.shape_of(dec.outputs().front()) == Shape{64, 64, 3});
  const NetworkGraph disc = build_vaegan_discriminator(8, 7);
  CHECK(disc.shape_of("d0") == Shape{1});
  CHECK(disc.shape_of("d1") == Shape{8});
  CHECK(disc.shape_of("d2") == Shape{7});
  const NetworkGraph check = build_check_discriminator(8);
  CHECK(check.shape_of("probs") == Shape{8});
}

TEST_CASE("random networks are deterministic per seed") {
  NetworkGraph a = build_check_discriminator(7), b = build_check_discriminator(7), c = build_check_discriminator(7);
  init_weights(a, 3);
  init_weights(b, 3);
  init_weights(c, 4);
  const Tensor x = random_tensor({64, 64, 3}, 8);
  const Tensor ya = forward_single(a, x);
  CHECK(ya == forward_single(b, x));
  CHECK(ya == forward_single(a, x));
  CHECK_FALSE(ya == forward_single(c, x));
}

TEST_CASE("training separates a linearly separable toy set") {
  NetworkGraph net = toy_classifier();
  init_weights(net, 1);
  const auto data = separable_points(200, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.5f;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.clip_norm = 0.0f;
  const TrainResult r = train_classifier(net, data, cfg);
  std::size_t hit = 0;
  for (const auto& s : data) hit += predict_class(r.net, s.input) == s.label;
  CHECK(hit == data.size());
  CHECK(r.history.size() == cfg.epochs);
  CHECK(r.history.back().loss < r.history.front().loss);
}

TEST_CASE("zero learning rate leaves weights unchanged and runs repeat exactly") {
  NetworkGraph net = toy_classifier();
  init_weights(net, 1);
  const auto data = separable_points(64, 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.0f;
  cfg.epochs = 2;
  const TrainResult frozen = train_classifier(net, data, cfg);
  CHECK(serialize_weights(frozen.net) == serialize_weights(net));

  cfg.learning_rate = 0.1f;
  const TrainResult r1 = train_classifier(net, data, cfg);
  const TrainResult r2 = train_classifier(net, data, cfg);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t e = 0; e < r1.history.size(); ++e) CHECK(r1.history[e].loss == r2.history[e].loss);
  CHECK(serialize_weights(r1.net) == serialize_weights(r2.net));
}

TEST_CASE("training validates its inputs") {
  NetworkGraph net = toy_classifier();
  TrainConfig cfg;
  CHECK_THROWS_AS(train_classifier(net, {}, cfg), DataError);
  CHECK_THROWS_AS(train_classifier(net, {{Tensor({2}), 5}}, cfg), DataError);
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.clip_norm = -1.0f;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("gradient check on a dense network with squared error") {
  NetworkGraph net;
  net.add_input("x", {6});
  net.append("fc1", make_fc(6, 5));
  net.append("t", tanh_activation());
  net.append("fc2", make_fc(5, 3));
  net.set_outputs({"fc2"});
  init_weights(net, 21);
  LossSpec loss{LossKind::MeanSquaredError, 0, random_tensor({3}, 22)};
  const auto report = gradient_check(net, {{"x", random_tensor({6}, 23)}}, loss);
  CHECK(report.max_deviation < 1e-3);
  CHECK(report.blocks.size() == 4);
}

TEST_CASE("gradient check across every layer kind") {
  NetworkGraph net;
  net.add_input("code", {6});
  net.append("fc", make_fc(6, 32));
  net.append("reshape", Reshape{{4, 4, 2}});
  net.append("up", make_tconv(3, 2, 3, 2, 1, 1));
  net.append("bn", make_batchnorm(3));
  net.append("act", leaky_relu());
  net.append("conv", make_conv(3, 3, 2, 1, 1));
  net.append("sig", sigmoid_activation());
  net.add_node("side", make_conv(1, 3, 2, 1, 0), {"act"});
  net.add_node("side_t", tanh_activation(), {"side"});
  net.add_node("cat", Concat{2}, {"sig", "side_t"});
  net.append("head", make_fc(8 * 8 * 4, 5));
  net.append("probs", softmax_activation());
  net.set_outputs({"probs"});
  init_weights(net, 31);
  for (auto& n : net.mutable_nodes())
    if (auto* bn = std::get_if<BatchNormInference>(&n.layer)) {
      bn->gamma = random_tensor({3}, 32, 0.5f, 1.5f);
      bn->beta = random_tensor({3}, 33, -0.2f, 0.2f);
      bn->running_var = random_tensor({3}, 34, 0.5f, 2.0f);
    }
  const auto report = gradient_check(net, {{"code", random_tensor({6}, 35)}}, {LossKind::CrossEntropy, 2, {}});
  CHECK(report.max_deviation < 1e-2);
  std::set<std::string> kinds;
  for (const auto& b : report.blocks) kinds.insert(std::string(layer_kind_name(net.node(b.node).layer)));
  CHECK(kinds.size() == 4);
}

TEST_CASE("gradient check on the check discriminator") {
  NetworkGraph net = build_check_discriminator(8);
  init_weights(net, 41);
  const auto report =
      gradient_check(net, {{"image", random_tensor({64, 64, 3}, 42)}}, {LossKind::CrossEntropy, 1, {}});
  CHECK(report.max_deviation < 1e-2);
  for (const auto& b : report.blocks) CHECK(b.probes > 0);
}

TEST_CASE("weight files round trip byte-for-byte and detect damage") {
  NetworkGraph net = build_check_discriminator(5);
  init_weights(net, 51);
  const auto bytes = serialize_weights(net);
  const NetworkGraph back = deserialize_weights(bytes);
  CHECK(serialize_weights(back) == bytes);
  const Tensor x = random_tensor({64, 64, 3}, 52);
  CHECK(forward_single(back, x) == forward_single(net, x));

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_weights(truncated), FormatError);
  auto flipped = bytes;
  flipped[bytes.size() / 3] ^= 0x10;
  CHECK_THROWS_AS(deserialize_weights(flipped), ChecksumError);
  CHECK_THROWS_AS(deserialize_weights({}), FormatError);
}

TEST_CASE("crc32 matches the standard check value") {
  const std::string s = "123456789";
  CHECK(crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}) == 0xCBF43926u);
}
