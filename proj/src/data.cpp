#include "stegosan/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "stegosan/checksum.hpp"
#include "stegosan/error.hpp"
#include "stegosan/parallel.hpp"

namespace stegosan {

using nlohmann::json;

namespace {

constexpr float kSoftness = 3.5f;
constexpr float kPixelLimit = 0.95f;

constexpr float kGrain = 0.03f;

// Fixed fine-grained texture, a function of pixel position and channel only.
// Without it the flat regions make pixel rounding errors strongly correlated
// within a block, which real photographs do not show.
float grain(std::size_t x, std::size_t y, std::size_t c) {
  const std::uint64_t h = mix64((static_cast<std::uint64_t>(y) << 32) ^ (static_cast<std::uint64_t>(x) << 8) ^ c);
  return kGrain * static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0);
}

using Rgb = std::array<float, 3>;

float coverage(float signed_distance) { return 0.5f * (1.0f + std::tanh(signed_distance / kSoftness)); }

void blend(Rgb& dst, const Rgb& src, float a) {
  for (int c = 0; c < 3; ++c) dst[c] += a * (src[c] - dst[c]);
}

float segment_distance(float px, float py, float ax, float ay, float bx, float by) {
  const float vx = bx - ax, vy = by - ay;
  const float t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0f, 1.0f);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

struct Geometry {
  float scale;       // pixels per design unit (design canvas is 64 wide)
  Rgb skin;
  float aspect;      // face half-width / half-height
  float eye_offset;  // half the distance between eye centres
  float brow_angle;  // radians, positive raises the outer end
  float mouth_curve; // -1 frown ... +1 smile
  float mouth_open;
};

Geometry geometry(std::size_t id, std::size_t ep, std::size_t n_id, std::size_t n_ep, std::size_t size) {
  Geometry g{};
  g.scale = static_cast<float>(size) / 64.0f;
  const double hue = 2.0 * std::numbers::pi * static_cast<double>(id) / static_cast<double>(n_id);
  const double third = 2.0 * std::numbers::pi / 3.0;
  g.skin = {static_cast<float>(0.30 + 0.35 * std::cos(hue)), static_cast<float>(0.15 + 0.35 * std::cos(hue - third)),
            static_cast<float>(0.05 + 0.35 * std::cos(hue + third))};
  g.aspect = 0.66f + 0.08f * static_cast<float>(id % 4);
  g.eye_offset = 6.5f + 1.5f * static_cast<float>((id / 2) % 3);
  const float t = n_ep > 1 ? static_cast<float>(ep) / static_cast<float>(n_ep - 1) : 0.5f;
  g.brow_angle = (t - 0.5f) * 1.6f;
  g.mouth_curve = 2.0f * t - 1.0f;
  g.mouth_open = 1.5f + 2.5f * std::fabs(2.0f * t - 1.0f);
  return g;
}

}  // namespace

FaceRenderer::FaceRenderer(std::size_t n_id, std::size_t n_ep, std::size_t image_size)
    : n_id_(n_id), n_ep_(n_ep), size_(image_size) {
  if (n_id < 1 || n_ep < 1) throw ConfigError("renderer needs at least one id and one expression");
  if (image_size < 16) throw ConfigError("renderer image size must be >= 16");
}

Tensor FaceRenderer::render(const FaceSpec& spec) const {
  if (spec.id >= n_id_) throw ConfigError("id " + std::to_string(spec.id) + " out of range");
  if (spec.ep >= n_ep_) throw ConfigError("expression " + std::to_string(spec.ep) + " out of range");
  const auto& nz = spec.nuisance;
  if (std::fabs(nz.dx) > kMaxShift || std::fabs(nz.dy) > kMaxShift) throw ConfigError("nuisance shift out of range");
  for (float b : nz.brightness)
    if (std::fabs(b) > kMaxBrightness) throw ConfigError("nuisance brightness out of range");

  const Geometry g = geometry(spec.id, spec.ep, n_id_, n_ep_, size_);
  const float s = g.scale;
  const float cx = 32.0f * s + nz.dx, cy = 34.0f * s + nz.dy;
  const float ry = 25.0f * s, rx = ry * g.aspect;
  const float eye_y = cy - 7.0f * s, eye_r = 3.2f * s;
  const float brow_y = cy - 14.0f * s, brow_half = 6.0f * s, brow_w = 1.4f * s;
  const float mouth_y = cy + 11.0f * s, mouth_half = 10.0f * s;

  const Rgb eye_col{-0.5f, -0.5f, -0.4f};
  const Rgb brow_col{-0.45f, -0.5f, -0.55f};
  const Rgb mouth_col{-0.2f, -0.65f, -0.6f};

  Tensor out({size_, size_, 3});
  for (std::size_t yi = 0; yi < size_; ++yi) {
    for (std::size_t xi = 0; xi < size_; ++xi) {
      const float px = static_cast<float>(xi) + 0.5f, py = static_cast<float>(yi) + 0.5f;
      const float shade = 0.12f * (py / static_cast<float>(size_) - 0.5f);
      Rgb col{-0.55f + shade, -0.5f + shade, -0.4f + shade};

      const float ex = (px - cx) / rx, ey = (py - cy) / ry;
      const float face = coverage((1.0f - std::sqrt(ex * ex + ey * ey)) * std::min(rx, ry));
      blend(col, g.skin, face);

      for (int side = -1; side <= 1; side += 2) {
        const float ecx = cx + static_cast<float>(side) * g.eye_offset * s;
        blend(col, eye_col, face * coverage(eye_r - std::hypot(px - ecx, py - eye_y)));

        // Brow tilt mirrors across the face; positive angle raises the outer end.
        const float bcx = ecx, dxb = brow_half * std::cos(g.brow_angle), dyb = brow_half * std::sin(g.brow_angle);
        const float ox = bcx + static_cast<float>(side) * dxb, oy = brow_y - dyb;
        const float ix = bcx - static_cast<float>(side) * dxb, iy = brow_y + dyb;
        blend(col, brow_col, face * coverage(brow_w - segment_distance(px, py, ix, iy, ox, oy)));
      }

      // Mouth: a parabola bent by mouth_curve, thickened by mouth_open.
      const float u = std::clamp((px - cx) / mouth_half, -1.0f, 1.0f);
      const float bend = g.mouth_curve * 14.0f * s;
      const float my = mouth_y - bend * (u * u - 0.5f);
      const float slope = std::fabs(px - cx) < mouth_half ? 2.0f * bend * u / mouth_half : 0.0f;
      const float along = std::max(0.0f, std::fabs(px - cx) - mouth_half);
      const float dist = std::hypot(along, (py - my) / std::sqrt(1.0f + slope * slope));
      blend(col, mouth_col, face * coverage(g.mouth_open * s - dist));

      for (std::size_t c = 0; c < 3; ++c) {
        out.at(yi, xi, c) = std::clamp(col[c] + grain(xi, yi, c) + nz.brightness[c], -kPixelLimit, kPixelLimit);
      }
    }
  }
  return out;
}

Nuisance sample_nuisance(SplitMix64& rng) {
  Nuisance n;
  n.dx = static_cast<float>(rng.uniform(-kMaxShift, kMaxShift));
  n.dy = static_cast<float>(rng.uniform(-kMaxShift, kMaxShift));
  for (float& b : n.brightness) b = static_cast<float>(rng.uniform(-kMaxBrightness, kMaxBrightness));
  return n;
}

namespace {

double differing_fraction(const Tensor& a, const Tensor& b) {
  const std::size_t ch = a.extent(2), pixels = a.size() / ch;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pixels; ++p) {
    float d = 0.0f;
    for (std::size_t c = 0; c < ch; ++c) d = std::max(d, std::fabs(a[p * ch + c] - b[p * ch + c]));
    count += d >= 0.1f;
  }
  return static_cast<double>(count) / static_cast<double>(pixels);
}

}  // namespace

RendererContract verify_renderer_contract(const FaceRenderer& r, std::uint64_t seed, std::size_t nuisance_trials) {
  RendererContract rep;
  std::vector<Tensor> canon;
  for (std::size_t id = 0; id < r.n_id(); ++id)
    for (std::size_t ep = 0; ep < r.n_ep(); ++ep) canon.push_back(r.canonical(id, ep));
  const std::size_t ne = r.n_ep();
  for (std::size_t i = 0; i < canon.size(); ++i)
    for (std::size_t j = i + 1; j < canon.size(); ++j) {
      if (canon[i] == canon[j]) rep.canonical_distinct = false;
      const double frac = differing_fraction(canon[i], canon[j]);
      if (i / ne != j / ne && i % ne == j % ne) rep.min_id_fraction = std::min(rep.min_id_fraction, frac);
      if (i / ne == j / ne) rep.min_ep_fraction = std::min(rep.min_ep_fraction, frac);
    }
  SplitMix64 rng(seed);
  for (std::size_t t = 0; t < nuisance_trials; ++t) {
    const FaceSpec spec{rng.below(r.n_id()), rng.below(r.n_ep()), sample_nuisance(rng)};
    const Tensor jittered = r.render(spec);
    const Tensor base = r.canonical(spec.id, spec.ep);
    rep.max_nuisance_linf = std::max(rep.max_nuisance_linf, static_cast<double>(max_abs_diff(jittered, base)));
  }
  const bool ids_ok = r.n_id() < 2 || rep.min_id_fraction >= 0.05;
  const bool eps_ok = r.n_ep() < 2 || rep.min_ep_fraction >= 0.05;
  rep.ok = rep.canonical_distinct && ids_ok && eps_ok && rep.max_nuisance_linf <= 0.2;
  return rep;
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<DatasetRecord> DatasetManifest::split(Split s) const {
  std::vector<DatasetRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

DatasetManifest plan_dataset(std::size_t n_id, std::size_t n_ep, std::size_t per_class, std::uint64_t seed) {
  if (per_class < 2) throw ConfigError("per_class must be >= 2");
  if (n_id < 1 || n_ep < 1) throw ConfigError("n_id and n_ep must be >= 1");
  DatasetManifest m;
  m.seed = seed;
  m.n_id = n_id;
  m.n_ep = n_ep;
  m.per_class = per_class;
  const std::size_t n_test = std::max<std::size_t>(1, per_class / 5);
  std::size_t index = 0;
  for (std::size_t id = 0; id < n_id; ++id)
    for (std::size_t ep = 0; ep < n_ep; ++ep)
      for (std::size_t k = 0; k < per_class; ++k, ++index) {
        SplitMix64 rng(derive_seed(seed, index));
        DatasetRecord rec;
        rec.spec = {id, ep, sample_nuisance(rng)};
        rec.split = k + n_test >= per_class ? Split::Test : Split::Train;
        m.records.push_back(rec);
      }
  return m;
}

DatasetManifest generate_dataset(std::size_t n_id, std::size_t n_ep, std::size_t per_class, std::uint64_t seed,
                                 const std::string& out_dir, const std::string& image_format) {
  if (image_format != "sgif" && image_format != "ppm") throw ConfigError("image format must be sgif or ppm");
  DatasetManifest m = plan_dataset(n_id, n_ep, per_class, seed);
  m.image_format = image_format;
  std::error_code ec;
  std::filesystem::create_directories(std::filesystem::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  const FaceRenderer renderer(n_id, n_ep);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "images/%06zu_id%zu_ep%zu.%s", i, m.records[i].spec.id, m.records[i].spec.ep,
                  image_format.c_str());
    m.records[i].path = name;
  }
  parallel_for(m.records.size(), [&](std::size_t i) {
    const Tensor img = renderer.render(m.records[i].spec);
    const std::string path = (std::filesystem::path(out_dir) / m.records[i].path).string();
    if (image_format == "ppm") {
      save_ppm(img, path);
    } else {
      save_float_image(img, path);
    }
  });
  save_manifest(m, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const json header = {{"generator", "stegosan"}, {"seed", m.seed},           {"n_id", m.n_id},
                       {"n_ep", m.n_ep},          {"per_class", m.per_class}, {"count", m.records.size()},
                       {"image_format", m.image_format}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) {
    const auto& n = r.spec.nuisance;
    const json rec = {{"path", r.path},
                      {"id", r.spec.id},
                      {"ep", r.spec.ep},
                      {"split", split_name(r.split)},
                      {"nuisance", {n.dx, n.dy, n.brightness[0], n.brightness[1], n.brightness[2]}}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  DatasetManifest m;
  std::string line;
  try {
    if (!std::getline(in, line)) throw FormatError("empty manifest");
    const json h = json::parse(line);
    m.seed = h.at("seed").get<std::uint64_t>();
    m.n_id = h.at("n_id").get<std::size_t>();
    m.n_ep = h.at("n_ep").get<std::size_t>();
    m.per_class = h.at("per_class").get<std::size_t>();
    m.image_format = h.value("image_format", "sgif");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json r = json::parse(line);
      DatasetRecord rec;
      rec.path = r.at("path").get<std::string>();
      rec.spec.id = r.at("id").get<std::size_t>();
      rec.spec.ep = r.at("ep").get<std::size_t>();
      const auto split = r.at("split").get<std::string>();
      if (split != "train" && split != "test") throw FormatError("unknown split '" + split + "'");
      rec.split = split == "train" ? Split::Train : Split::Test;
      if (r.contains("nuisance")) {
        const auto v = r.at("nuisance").get<std::vector<float>>();
        if (v.size() != 5) throw FormatError("nuisance needs 5 values");
        rec.spec.nuisance = {v[0], v[1], {v[2], v[3], v[4]}};
      }
      if (rec.spec.id >= m.n_id || rec.spec.ep >= m.n_ep) throw DataError("manifest label out of range");
      m.records.push_back(rec);
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return m;
}

void save_float_image(const Tensor& image, const std::string& path) {
  if (image.rank() != 3) throw ShapeError("float image must be h x w x c");
  ByteWriter w;
  w.bytes("SGIF");
  w.u16(1);
  for (std::size_t a = 0; a < 3; ++a) w.u32(static_cast<std::uint32_t>(image.extent(a)));
  for (float v : image.data()) w.f32(v);
  seal_with_crc(w.buffer());
  write_file(path, w.buffer());
}

Tensor load_float_image(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r(open_sealed(bytes));
  if (r.bytes(4) != "SGIF") throw FormatError(path + ": bad magic");
  if (r.u16() != 1) throw FormatError(path + ": unsupported version");
  Shape s{r.u32(), r.u32(), r.u32()};
  for (auto e : s)
    if (e == 0) throw FormatError(path + ": zero extent");
  if (shape_size(s) * 4 != r.remaining()) throw FormatError(path + ": payload size mismatch");
  std::vector<float> data(shape_size(s));
  for (auto& v : data) v = r.f32();
  return Tensor(std::move(s), std::move(data));
}

void save_ppm(const Tensor& image, const std::string& path, bool rescale_255) {
  if (image.rank() != 3 || image.extent(2) != 3) throw ShapeError("P6 pixmap needs an h x w x 3 image");
  const float div = rescale_255 ? 255.0f : 1.0f;
  std::ostringstream head;
  head << "P6\n" << image.extent(1) << ' ' << image.extent(0) << "\n255\n";
  std::vector<std::uint8_t> bytes;
  const std::string h = head.str();
  bytes.assign(h.begin(), h.end());
  for (float v : image.data()) {
    const float x = v / div;
    if (!(x >= -1.0f && x <= 1.0f)) {
      throw DataError(rescale_255 ? "pixel outside [-255, 255]" : "pixel outside [-1, 1]; pass the rescale flag for stego images");
    }
    bytes.push_back(static_cast<std::uint8_t>(std::round((static_cast<double>(x) + 1.0) * 127.5)));
  }
  write_file(path, bytes);
}

Tensor load_ppm(const std::string& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") throw FormatError(path + ": not a binary P6 pixmap");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError(path + ": malformed header");
  }
  if (maxval != 255 || w == 0 || h == 0) throw FormatError(path + ": only 8-bit pixmaps are supported");
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() < pos + w * h * 3) throw FormatError(path + ": raster truncated");
  Tensor out({h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) out[i] = static_cast<float>(bytes[pos + i] / 127.5 - 1.0);
  return out;
}

Tensor load_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".ppm") return load_ppm(path);
  if (ext == ".sgif") return load_float_image(path);
  throw ConfigError("unknown image extension '" + ext + "'");
}

Tensor quantize_8bit(const Tensor& image) {
  Tensor out = image;
  for (float& v : out.values()) {
    const double x = std::clamp(static_cast<double>(v), -1.0, 1.0);
    v = static_cast<float>(std::round((x + 1.0) * 127.5) / 127.5 - 1.0);
  }
  return out;
}

}  // namespace stegosan
