#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stegosan/checksum.hpp"
#include "stegosan/data.hpp"
#include "stegosan/dct.hpp"
#include "stegosan/error.hpp"
#include "stegosan/merge.hpp"
#include "stegosan/pipeline.hpp"
#include "stegosan/stego.hpp"

namespace py = pybind11;
using namespace stegosan;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> bits_array(const Bits& b) {
  return py::array_t<std::uint8_t>(static_cast<py::ssize_t>(b.size()), b.data());
}

Bits to_bits(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  return Bits(a.data(), a.data() + a.size());
}

ExtractMode mode_from_name(const std::string& name) {
  if (name == "nearest") return ExtractMode::Nearest;
  if (name == "quantized") return ExtractMode::QuantizedConsistency;
  throw ConfigError("extract mode must be 'nearest' or 'quantized', got '" + name + "'");
}

LabeledImage labeled(const FloatArray& image, std::size_t y_id, std::size_t y_ep) {
  return {to_tensor(image), y_id, y_ep, std::nullopt};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DCT steganography inside a face sanitizer, and the checks that catch it.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto format = py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ChecksumError>(m, "ChecksumError", format.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  py::class_<DctConfig>(m, "DctConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &DctConfig::image_size)
      .def_readwrite("block_size", &DctConfig::block_size)
      .def_readwrite("pixel_scale", &DctConfig::pixel_scale);

  m.def("zigzag_order", &zigzag_order, py::arg("n") = 8);
  m.def(
      "image_dct",
      [](const FloatArray& image, const DctConfig& cfg, double scale) {
        const Tensor img = to_tensor(image);
        if (img.rank() != 3) throw ShapeError("image must be (height, width, channels)");
        const std::size_t b = cfg.blocks_per_side();
        return to_array(image_dct_tensor(img, cfg, scale).reshaped({b, b, cfg.frequencies(), img.extent(2)}));
      },
      py::arg("image"), py::arg("cfg") = DctConfig{}, py::arg("scale") = 1.0,
      "Blockwise DCT as a (B, B, n*n, channels) array, zig-zag frequency order.");
  m.def(
      "image_idct",
      [](const FloatArray& coeffs, const DctConfig& cfg) {
        if (coeffs.ndim() != 4) throw ShapeError("coefficients must be (B, B, n*n, channels)");
        const std::vector<double> flat(coeffs.data(), coeffs.data() + coeffs.size());
        return to_array(image_idct(flat, static_cast<std::size_t>(coeffs.shape(3)), cfg));
      },
      py::arg("coeffs"), py::arg("cfg") = DctConfig{});

  py::class_<FaceRenderer>(m, "FaceRenderer")
      .def(py::init<std::size_t, std::size_t, std::size_t>(), py::arg("n_id") = 8, py::arg("n_ep") = 7,
           py::arg("image_size") = 64)
      .def_property_readonly("n_id", &FaceRenderer::n_id)
      .def_property_readonly("n_ep", &FaceRenderer::n_ep)
      .def("canonical", [](const FaceRenderer& r, std::size_t id, std::size_t ep) { return to_array(r.canonical(id, ep)); })
      .def(
          "render",
          [](const FaceRenderer& r, std::size_t id, std::size_t ep, float dx, float dy, std::array<float, 3> brightness) {
            return to_array(r.render({id, ep, {dx, dy, brightness}}));
          },
          py::arg("id"), py::arg("ep"), py::arg("dx") = 0.0f, py::arg("dy") = 0.0f,
          py::arg("brightness") = std::array<float, 3>{0.0f, 0.0f, 0.0f});
  m.def("quantize_8bit", [](const FloatArray& img) { return to_array(quantize_8bit(to_tensor(img))); });
  m.def("quantize_pixels", [](const FloatArray& img) { return to_array(quantize_pixels(to_tensor(img))); });

  py::class_<CalibrationTable>(m, "CalibrationTable")
      .def_property_readonly("size", [](const CalibrationTable& t) { return t.entries.size(); })
      .def("to_json", [](const CalibrationTable& t) { return calibration_to_json(t).dump(); })
      .def_static("from_json", [](const std::string& s) { return calibration_from_json(nlohmann::json::parse(s)); })
      .def("save", [](const CalibrationTable& t, const std::string& path) { save_calibration(t, path); })
      .def_static("load", &load_calibration);
  m.def(
      "calibrate",
      [](const std::vector<FloatArray>& images, const DctConfig& cfg) {
        std::vector<Tensor> ts;
        for (const auto& a : images) ts.push_back(to_tensor(a));
        return calibrate(ts, cfg);
      },
      py::arg("images"), py::arg("cfg") = DctConfig{});

  py::class_<StegoKey>(m, "StegoKey")
      .def_readonly("k", &StegoKey::k)
      .def_readonly("permutation", &StegoKey::permutation)
      .def_property_readonly("positions",
                             [](const StegoKey& key) {
                               py::list out;
                               for (const auto& p : key.positions)
                                 out.append(py::make_tuple(p.block_row, p.block_col, p.freq, p.channel));
                               return out;
                             })
      .def("to_json", [](const StegoKey& key) { return key_to_json(key).dump(); })
      .def_static("from_json", [](const std::string& s) { return key_from_json(nlohmann::json::parse(s)); })
      .def("__eq__", &StegoKey::operator==);
  m.def("derive_key", &derive_key_for_index, py::arg("y_ep"), py::arg("id_index"), py::arg("k"), py::arg("table"),
        py::arg("m_pool") = 32);

  m.def(
      "embed",
      [](const FloatArray& sanitized, const py::array_t<std::uint8_t>& secret, const StegoKey& key,
         const DctConfig& cfg) { return to_array(embed(to_tensor(sanitized), to_bits(secret), key, cfg)); },
      py::arg("sanitized"), py::arg("secret"), py::arg("key"), py::arg("cfg") = DctConfig{},
      "Stego image idct(2 * round(scale * dct(I')) + S), values in [-255, 255].");
  m.def(
      "extract",
      [](const FloatArray& stego, const StegoKey& key, const DctConfig& cfg, const std::string& mode) {
        return bits_array(extract(to_tensor(stego), key, cfg, mode_from_name(mode)));
      },
      py::arg("stego"), py::arg("key"), py::arg("cfg") = DctConfig{}, py::arg("mode") = "nearest");
  m.def(
      "embedding_distortion",
      [](const FloatArray& sanitized, const FloatArray& stego, const DctConfig& cfg) {
        return embedding_distortion(to_tensor(sanitized), to_tensor(stego), cfg);
      },
      py::arg("sanitized"), py::arg("stego"), py::arg("cfg") = DctConfig{});

  py::class_<SanitizerConfig>(m, "SanitizerConfig")
      .def(py::init<>())
      .def_readwrite("scheme", &SanitizerConfig::scheme)
      .def_readwrite("k", &SanitizerConfig::k)
      .def_readwrite("m_pool", &SanitizerConfig::m_pool)
      .def_readwrite("n_id", &SanitizerConfig::n_id)
      .def_readwrite("n_ep", &SanitizerConfig::n_ep)
      .def_readwrite("dct", &SanitizerConfig::dct)
      .def_readwrite("latent_seed", &SanitizerConfig::latent_seed)
      .def("validate", &SanitizerConfig::validate)
      .def("to_json", [](const SanitizerConfig& c) { return sanitizer_config_to_json(c).dump(); });

  py::class_<SanitizerModel>(m, "Sanitizer")
      .def_readonly("config", &SanitizerModel::config)
      .def("save", [](const SanitizerModel& s, const std::string& dir) { save_bundle(s, dir); })
      .def_static("load", &load_bundle);
  m.def("reference_sanitizer", &make_reference_sanitizer, py::arg("cfg"), py::arg("table"));
  m.def(
      "honest_sanitize",
      [](const SanitizerModel& s, const FloatArray& image, std::size_t y_id, std::size_t y_ep, std::size_t target) {
        return to_array(honest_sanitize(s, labeled(image, y_id, y_ep), one_hot(target, s.config.n_id)));
      },
      py::arg("sanitizer"), py::arg("image"), py::arg("y_id"), py::arg("y_ep"), py::arg("target"));
  m.def(
      "adversarial_sanitize",
      [](const SanitizerModel& s, const FloatArray& image, std::size_t y_id, std::size_t y_ep, std::size_t target) {
        const AdversarialOutput out = adversarial_sanitize(s, labeled(image, y_id, y_ep), one_hot(target, s.config.n_id));
        py::dict d;
        d["sanitized"] = to_array(out.sanitized);
        d["stego"] = to_array(out.stego);
        d["secret"] = bits_array(out.secret);
        d["key"] = out.key;
        return d;
      },
      py::arg("sanitizer"), py::arg("image"), py::arg("y_id"), py::arg("y_ep"), py::arg("target"),
      "Sanitized image I', stego image I'', the hidden bits and the key that reads them.");
  m.def(
      "recover_scheme1",
      [](const FloatArray& stego, std::size_t y_ep, std::size_t y_id, const CalibrationTable& table,
         const SanitizerConfig& cfg, const std::string& mode) {
        const Scheme1Recovery r = recover_scheme1(to_tensor(stego), {y_ep, y_id}, table, cfg, mode_from_name(mode));
        return py::make_tuple(r.y_id, bits_array(r.bits), r.low_confidence);
      },
      py::arg("stego"), py::arg("y_ep"), py::arg("y_id"), py::arg("table"), py::arg("cfg"), py::arg("mode") = "nearest",
      "Returns (recovered identity, extracted bits, low_confidence).");
  m.def(
      "recover_scheme2",
      [](const FloatArray& stego, std::size_t y_ep, std::size_t y_id, const CalibrationTable& table,
         const SanitizerConfig& cfg, const std::string& mode) {
        const Scheme2Recovery r = recover_scheme2(to_tensor(stego), {y_ep, y_id}, table, cfg, {}, mode_from_name(mode));
        return py::make_tuple(r.spec.id, r.spec.ep, to_array(r.reconstruction));
      },
      py::arg("stego"), py::arg("y_ep"), py::arg("y_id"), py::arg("table"), py::arg("cfg"), py::arg("mode") = "nearest",
      "Returns (identity, expression, re-rendered face).");

  m.def(
      "verify_random_merge",
      [](std::size_t k, std::size_t samples, std::uint64_t seed) {
        const DctConfig cfg;
        const std::size_t code = SanitizerModel::nn_latent_dim() + k;
        const auto s = random_decoder_dct_path(k + code, cfg, seed);
        const auto t = random_decoder_dct_path(code, cfg, seed + 1);
        const MergePlan plan = plan_merge(s, t, k);
        const auto merged = merge_networks(s, t, plan);
        const MergeVerification v = verify_merge(s, t, merged, plan, samples, seed + 2);
        return py::make_tuple(v.pass, v.max_deviation, count_nonzero_cross_block(merged, plan));
      },
      py::arg("k") = 8, py::arg("samples") = 2, py::arg("seed") = 1,
      "Merges two random decoder-DCT paths; returns (pass, max deviation, nonzero cross-block weights).");

  m.def("crc32", [](py::bytes b) {
    const std::string s = b;
    return crc32(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  });
}
