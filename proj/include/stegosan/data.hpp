#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stegosan/rng.hpp"
#include "stegosan/tensor.hpp"

namespace stegosan {

/// Small per-image jitter: sub-pixel-to-pixel translation and a per-channel
/// brightness offset.
struct Nuisance {
  float dx = 0.0f;
  float dy = 0.0f;
  std::array<float, 3> brightness{0.0f, 0.0f, 0.0f};

  bool operator==(const Nuisance&) const = default;
};

inline constexpr float kMaxShift = 0.5f;
inline constexpr float kMaxBrightness = 0.05f;

struct FaceSpec {
  std::size_t id = 0;
  std::size_t ep = 0;
  Nuisance nuisance;
};

/// Deterministic face-like images whose identity (hue, face aspect, eye
/// spacing) and expression (mouth curvature, eyebrow angle) are explicit.
class FaceRenderer {
 public:
  FaceRenderer(std::size_t n_id, std::size_t n_ep, std::size_t image_size = 64);

  std::size_t n_id() const noexcept { return n_id_; }
  std::size_t n_ep() const noexcept { return n_ep_; }
  std::size_t image_size() const noexcept { return size_; }

  /// image_size x image_size x 3, values inside [-0.95, 0.95].
  Tensor render(const FaceSpec& spec) const;
  Tensor canonical(std::size_t id, std::size_t ep) const { return render({id, ep, {}}); }

 private:
  std::size_t n_id_, n_ep_, size_;
};

Nuisance sample_nuisance(SplitMix64& rng);

struct RendererContract {
  double min_id_fraction = 1.0;  // smallest share of pixels differing by >= 0.1 between two ids
  double min_ep_fraction = 1.0;  // same for two expressions
  double max_nuisance_linf = 0.0;
  bool canonical_distinct = true;
  bool ok = false;
};

/// Exhaustive distinctness check over the (id, ep) grid and a nuisance sweep.
RendererContract verify_renderer_contract(const FaceRenderer& renderer, std::uint64_t seed,
                                          std::size_t nuisance_trials = 200);

enum class Split { Train, Test };
std::string split_name(Split s);

struct DatasetRecord {
  std::string path;  // relative to the dataset directory; empty for in-memory sets
  FaceSpec spec;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t n_id = 0;
  std::size_t n_ep = 0;
  std::size_t per_class = 0;
  std::string image_format = "sgif";
  std::vector<DatasetRecord> records;

  std::vector<DatasetRecord> split(Split s) const;
};

/// Stratified records: per (id, ep) class, `per_class` images with nuisance
/// drawn from derive_seed(seed, record index); the last max(1, per_class / 5)
/// of each class form the test split.
DatasetManifest plan_dataset(std::size_t n_id, std::size_t n_ep, std::size_t per_class, std::uint64_t seed);

/// Renders and writes every image plus manifest.jsonl into out_dir.
DatasetManifest generate_dataset(std::size_t n_id, std::size_t n_ep, std::size_t per_class, std::uint64_t seed,
                                 const std::string& out_dir, const std::string& image_format = "sgif");

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Lossless float container: "SGIF" | u16 version | u32 h, w, c | f32 data | CRC32.
void save_float_image(const Tensor& image, const std::string& path);
Tensor load_float_image(const std::string& path);

/// Binary P6 pixmap. Pixels in [-1, 1] map to round((v + 1) * 127.5). Values
/// outside [-1, 1] are rejected unless `rescale_255` is set, in which case the
/// image is first divided by 255 (the [-255, 255] range of stego images).
void save_ppm(const Tensor& image, const std::string& path, bool rescale_255 = false);
Tensor load_ppm(const std::string& path);

/// Loads by extension (.ppm or .sgif).
Tensor load_image(const std::string& path);

/// Round trip through 8-bit storage for a [-1, 1] image.
Tensor quantize_8bit(const Tensor& image);

}  // namespace stegosan
