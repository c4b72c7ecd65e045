#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "stegosan/checksum.hpp"
#include "stegosan/data.hpp"
#include "stegosan/error.hpp"
#include "stegosan/rng.hpp"

using namespace stegosan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stegosan_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("renderer output is deterministic and in range") {
  const FaceRenderer r(8, 7);
  const FaceSpec spec{3, 4, {0.4f, -0.25f, {0.03f, -0.05f, 0.0f}}};
  const Tensor a = r.render(spec);
  CHECK(a.shape() == Shape{64, 64, 3});
  CHECK(a == r.render(spec));
  for (float v : a.data()) {
    CHECK(v >= -0.95f);
    CHECK(v <= 0.95f);
  }
  CHECK_FALSE(a == r.canonical(3, 4));
  CHECK_THROWS_AS(r.render({8, 0, {}}), ConfigError);
  CHECK_THROWS_AS(r.render({0, 0, {kMaxShift * 2, 0.0f, {}}}), ConfigError);
}

TEST_CASE("identity and expression change many pixels, nuisance changes them slightly") {
  const FaceRenderer r(8, 7);
  const RendererContract c = verify_renderer_contract(r, 3, 50);
  CHECK(c.ok);
  CHECK(c.canonical_distinct);
  CHECK(c.min_id_fraction > 0.05);
  CHECK(c.min_ep_fraction > 0.02);
  CHECK(c.max_nuisance_linf <= 0.2);
  // A direct look at one pair of identities.
  const Tensor a = r.canonical(0, 0), b = r.canonical(1, 0);
  std::size_t differing = 0;
  for (std::size_t p = 0; p < 64 * 64; ++p) {
    bool moved = false;
    for (std::size_t ch = 0; ch < 3; ++ch) moved |= std::fabs(a[p * 3 + ch] - b[p * 3 + ch]) >= 0.1f;
    differing += moved;
  }
  CHECK(double(differing) / (64 * 64) >= c.min_id_fraction);
}

TEST_CASE("nuisance samples respect their bounds") {
  SplitMix64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const Nuisance n = sample_nuisance(rng);
    CHECK(std::fabs(n.dx) <= kMaxShift);
    CHECK(std::fabs(n.dy) <= kMaxShift);
    for (float b : n.brightness) CHECK(std::fabs(b) <= kMaxBrightness);
  }
}

TEST_CASE("dataset plans are stratified") {
  const DatasetManifest m = plan_dataset(4, 3, 10, 9);
  CHECK(m.records.size() == 120);
  std::map<std::pair<std::size_t, std::size_t>, std::pair<int, int>> counts;
  for (const auto& r : m.records) {
    auto& c = counts[{r.spec.id, r.spec.ep}];
    (r.split == Split::Train ? c.first : c.second)++;
  }
  CHECK(counts.size() == 12);
  for (const auto& [cls, c] : counts) {
    CHECK(c.first == 8);
    CHECK(c.second == 2);
  }
  CHECK(m.split(Split::Test).size() == 24);
  CHECK(plan_dataset(4, 3, 2, 9).split(Split::Test).size() == 12);
  const DatasetManifest again = plan_dataset(4, 3, 10, 9);
  CHECK(again.records[17].spec.nuisance == m.records[17].spec.nuisance);
  CHECK_FALSE(plan_dataset(4, 3, 10, 10).records[17].spec.nuisance == m.records[17].spec.nuisance);
  CHECK_THROWS_AS(plan_dataset(4, 3, 1, 9), ConfigError);
}

TEST_CASE("float images round trip exactly and reject damage") {
  const fs::path dir = scratch_dir("sgif");
  Tensor img({64, 64, 3});
  SplitMix64 rng(1);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform(-255.0, 255.0));
  const std::string path = (dir / "a.sgif").string();
  save_float_image(img, path);
  CHECK(load_float_image(path) == img);
  CHECK(load_image(path) == img);

  auto bytes = read_file(path);
  bytes[40] ^= 0x01;
  write_file(path, bytes);
  CHECK_THROWS_AS(load_float_image(path), ChecksumError);
  bytes.resize(20);
  write_file(path, bytes);
  CHECK_THROWS_AS(load_float_image(path), FormatError);
  CHECK_THROWS_AS(load_float_image((dir / "missing.sgif").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("PPM storage equals 8-bit quantization") {
  const fs::path dir = scratch_dir("ppm");
  const Tensor img = FaceRenderer(8, 7).canonical(2, 5);
  const std::string path = (dir / "a.ppm").string();
  save_ppm(img, path);
  const Tensor back = load_ppm(path);
  CHECK(back == quantize_8bit(img));
  CHECK(max_abs_diff(back, img) <= 1.0f / 255.0f + 1e-6f);
  CHECK(quantize_8bit(back) == back);
  // Bytes straight from the definition.
  const auto bytes = read_file(path);
  const std::string header = "P6\n64 64\n255\n";
  REQUIRE(bytes.size() == header.size() + 64 * 64 * 3);
  CHECK(bytes[header.size()] == static_cast<std::uint8_t>(std::lround((img[0] + 1.0) * 127.5)));

  CHECK_THROWS_AS(save_ppm(Tensor({64, 64, 3}, 3.0f), path), DataError);
  save_ppm(Tensor({64, 64, 3}, 255.0f), path, true);
  CHECK(load_ppm(path)[0] == 1.0f);
  fs::remove_all(dir);
}

TEST_CASE("generated datasets write a manifest that reads back") {
  const fs::path dir = scratch_dir("dataset");
  const DatasetManifest m = generate_dataset(2, 2, 3, 5, dir.string(), "ppm");
  CHECK(m.records.size() == 12);
  const DatasetManifest back = load_manifest((dir / "manifest.jsonl").string());
  REQUIRE(back.records.size() == m.records.size());
  CHECK(back.seed == 5);
  CHECK(back.image_format == "ppm");
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].path == m.records[i].path);
    CHECK(back.records[i].spec.id == m.records[i].spec.id);
    CHECK(back.records[i].split == m.records[i].split);
    CHECK(fs::exists(dir / m.records[i].path));
  }
  const Tensor first = load_image((dir / m.records[0].path).string());
  CHECK(first == quantize_8bit(FaceRenderer(2, 2).render(m.records[0].spec)));

  std::ofstream(dir / "bad.jsonl") << "{\"n_id\": 2}\n{\"path\": 1}\n";
  CHECK_THROWS(load_manifest((dir / "bad.jsonl").string()));
  CHECK_THROWS_AS(generate_dataset(2, 2, 3, 5, dir.string(), "png"), ConfigError);
  fs::remove_all(dir);
}
