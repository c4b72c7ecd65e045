#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stegosan/checks.hpp"
#include "stegosan/data.hpp"
#include "stegosan/dct.hpp"
#include "stegosan/error.hpp"
#include "stegosan/merge.hpp"
#include "stegosan/nn/weights_io.hpp"
#include "stegosan/parallel.hpp"
#include "stegosan/pipeline.hpp"
#include "stegosan/rng.hpp"
#include "stegosan/stego.hpp"

namespace stegosan::app {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kPrivacyMargin = 0.15;

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

struct LoadedSplit {
  DatasetManifest manifest;
  std::vector<DatasetRecord> records;
  std::vector<LabeledImage> images;
};

LoadedSplit load_split(const std::string& dir, Split split) {
  if (dir.empty()) throw ConfigError("--data is required");
  LoadedSplit s;
  s.manifest = load_manifest((fs::path(dir) / "manifest.jsonl").string());
  s.records = s.manifest.split(split);
  s.images.resize(s.records.size());
  parallel_for(s.records.size(), [&](std::size_t i) {
    const auto& r = s.records[i];
    s.images[i] = {load_image((fs::path(dir) / r.path).string()), r.spec.id, r.spec.ep, r.spec.nuisance};
  });
  return s;
}

/// Target identity for record i of a sanitize run.
std::size_t target_for(std::uint64_t seed, std::size_t i, std::size_t n_id) {
  SplitMix64 rng(derive_seed(mix64(seed ^ 0x7A26E7ULL), i));
  return static_cast<std::size_t>(rng.below(n_id));
}

/// Calibration over honest sanitized outputs of the training split.
CalibrationTable calibrate_split(const LoadedSplit& train, std::uint64_t seed, const DctConfig& dct) {
  SanitizerConfig cfg;
  cfg.n_id = train.manifest.n_id;
  cfg.n_ep = train.manifest.n_ep;
  cfg.k = 0;
  cfg.dct = dct;
  const SanitizerModel model = make_reference_sanitizer(cfg);
  std::vector<Tensor> sanitized(train.images.size());
  parallel_for(train.images.size(), [&](std::size_t i) {
    sanitized[i] = honest_sanitize(model, train.images[i], one_hot(target_for(seed, i, cfg.n_id), cfg.n_id));
  });
  return calibrate(sanitized, dct);
}

CalibrationTable calibration_for(const std::string& path, const std::string& data, std::uint64_t seed) {
  if (!path.empty()) return load_calibration(path);
  return calibrate_split(load_split(data, Split::Train), seed, DctConfig{});
}

SanitizerConfig sanitizer_config(const Context& ctx, int scheme, std::size_t n_id, std::size_t n_ep) {
  SanitizerConfig cfg;
  cfg.scheme = scheme;
  cfg.n_id = n_id;
  cfg.n_ep = n_ep;
  cfg.k = ctx.k != 0 ? ctx.k : (scheme == 1 ? n_id : kScheme2Lengths.front());
  cfg.m_pool = ctx.m_pool != 0 ? ctx.m_pool : 4 * cfg.k;
  cfg.validate();
  return cfg;
}

std::string stem_of(const DatasetRecord& r, std::size_t i) {
  if (r.path.empty()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return buf;
  }
  return fs::path(r.path).stem().string();
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("--split must be train or test");
}

void print_summary(const std::string& name, const json& j, const std::string& indent = "  ") {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const json& v = it.value();
    if (v.is_object()) {
      std::cout << indent << it.key() << ":\n";
      print_summary(name, v, indent + "  ");
    } else if (v.is_array() && (v.size() > 8 || (!v.empty() && v.front().is_object()))) {
      std::cout << indent << it.key() << ": [" << v.size() << " entries]\n";
    } else {
      std::cout << indent << it.key() << ": " << v.dump() << "\n";
    }
  }
}

void write_report(const std::string& out, const std::string& name, const json& report) {
  write_json(ensure_dir(out) / (name + ".json"), report);
}

}  // namespace

void publish(const Context& ctx, const std::string& name, const Outcome& outcome) {
  write_report(ctx.out, name, outcome.report);
  if (ctx.json) {
    std::cout << outcome.report.dump(2) << "\n";
    return;
  }
  std::cout << name << (outcome.exit_code == kOk ? "" : "  [FAILED]") << "\n";
  print_summary(name, outcome.report);
}

Outcome cmd_dataset_gen(const Context& ctx, const DatasetArgs& args) {
  if (args.per_class < 2) throw ConfigError("--per-class must be >= 2");
  FaceRenderer renderer(ctx.n_id, ctx.n_ep);
  const RendererContract contract = verify_renderer_contract(renderer, ctx.seed);
  const DatasetManifest m = generate_dataset(ctx.n_id, ctx.n_ep, args.per_class, ctx.seed, ctx.out, args.format);
  Outcome o;
  o.report = {{"command", "dataset gen"},
              {"seed", ctx.seed},
              {"n_id", ctx.n_id},
              {"n_ep", ctx.n_ep},
              {"per_class", args.per_class},
              {"format", args.format},
              {"n_images", m.records.size()},
              {"n_train", m.split(Split::Train).size()},
              {"n_test", m.split(Split::Test).size()},
              {"renderer_contract",
               {{"min_id_fraction", contract.min_id_fraction},
                {"min_ep_fraction", contract.min_ep_fraction},
                {"max_nuisance_linf", contract.max_nuisance_linf},
                {"canonical_distinct", contract.canonical_distinct},
                {"ok", contract.ok}}}};
  if (!contract.ok) o.exit_code = kCheckFailed;
  return o;
}

Outcome cmd_calibrate(const Context& ctx, const CalibrateArgs& args) {
  const LoadedSplit train = load_split(args.data, Split::Train);
  const CalibrationTable table = calibrate_split(train, ctx.seed, DctConfig{});
  const fs::path path = ensure_dir(ctx.out) / "calibration.json";
  save_calibration(table, path.string());
  json top = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(8, table.entries.size()); ++i) {
    const auto& e = table.entries[i];
    top.push_back({e.position.block_row, e.position.block_col, e.position.freq, e.position.channel, e.mean_abs});
  }
  return {{{"command", "calibrate"},
           {"seed", ctx.seed},
           {"images", table.image_count},
           {"fingerprint", table.fingerprint},
           {"positions", table.entries.size()},
           {"window", {table.window.first, table.window.last}},
           {"top", top},
           {"calibration", path.string()}},
          kOk};
}

Outcome cmd_sanitize(const Context& ctx, const SanitizeArgs& args) {
  if (args.mode != "honest" && args.mode != "adv") throw ConfigError("--mode must be honest or adv");
  if (args.kind != "reference" && args.kind != "nn") throw ConfigError("--kind must be reference or nn");
  const bool adversarial = args.mode == "adv";
  const LoadedSplit split = load_split(args.data, parse_split(args.split));
  const std::size_t n_id = split.manifest.n_id, n_ep = split.manifest.n_ep;
  SanitizerConfig cfg = sanitizer_config(ctx, args.scheme, n_id, n_ep);
  if (!adversarial) cfg.k = 0;
  std::optional<CalibrationTable> table;
  if (adversarial) table = calibration_for(args.calibration, args.data, ctx.seed);
  const SanitizerModel model = args.kind == "nn" ? make_network_sanitizer(cfg, args.weight_seed, table)
                                                 : make_reference_sanitizer(cfg, table);

  const fs::path root = ensure_dir(ctx.out);
  fs::create_directories(root / "images");
  if (adversarial) fs::create_directories(root / "keys");
  save_bundle(model, (root / "bundle").string());

  const std::size_t n = split.images.size();
  std::vector<json> records(n);
  std::vector<double> distortion(n, 0.0), peak(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    const std::size_t c = target_for(ctx.seed, i, n_id);
    const auto code = one_hot(c, n_id);
    const std::string stem = stem_of(split.records[i], i);
    const std::string image_path = "images/" + stem + ".sgif";
    json rec = {{"source", split.records[i].path},
                {"path", image_path},
                {"id", split.images[i].y_id},
                {"ep", split.images[i].y_ep},
                {"c", c}};
    const std::uint64_t latent = derive_seed(cfg.latent_seed, i);
    if (adversarial) {
      const AdversarialOutput out = adversarial_sanitize(model, split.images[i], code, latent);
      const Tensor stored = ctx.quantize_8bit ? quantize_pixels(out.stego) : out.stego;
      save_float_image(stored, (root / image_path).string());
      write_json(root / "keys" / (stem + ".json"), key_to_json(out.key));
      rec["key"] = "keys/" + stem + ".json";
      distortion[i] = embedding_distortion(out.sanitized, out.stego, cfg.dct);
      for (float v : stored.data()) peak[i] = std::max(peak[i], static_cast<double>(std::fabs(v)));
    } else {
      const Tensor out = honest_sanitize(model, split.images[i], code, latent);
      save_float_image(out, (root / image_path).string());
      for (float v : out.data()) peak[i] = std::max(peak[i], static_cast<double>(std::fabs(v)));
    }
    records[i] = std::move(rec);
  });

  std::ofstream listing(root / "sanitized.jsonl");
  if (!listing) throw IoError("cannot write sanitized.jsonl");
  listing << json{{"type", "header"},
                  {"mode", args.mode},
                  {"quantized", adversarial && ctx.quantize_8bit},
                  {"source", args.data},
                  {"split", args.split},
                  {"seed", ctx.seed},
                  {"config", sanitizer_config_to_json(cfg)}}
                 .dump()
          << "\n";
  for (const auto& r : records) listing << r.dump() << "\n";

  double mean_distortion = 0.0, max_peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_distortion += distortion[i];
    max_peak = std::max(max_peak, peak[i]);
  }
  if (n > 0) mean_distortion /= static_cast<double>(n);
  json report = {{"command", "sanitize"},   {"mode", args.mode},
                 {"kind", args.kind},       {"scheme", cfg.scheme},
                 {"K", cfg.k},              {"M", cfg.m_pool},
                 {"n_images", n},           {"quantized", adversarial && ctx.quantize_8bit},
                 {"max_abs_pixel", max_peak}, {"seed", ctx.seed}};
  if (adversarial) report["mean_embedding_distortion"] = mean_distortion;
  return {report, kOk};
}

Outcome cmd_extract(const Context& ctx, const ExtractArgs& args) {
  if (args.input.empty()) throw ConfigError("--input is required");
  const fs::path root(args.input);
  std::ifstream listing(root / "sanitized.jsonl");
  if (!listing) throw IoError("cannot open " + (root / "sanitized.jsonl").string());
  std::string line;
  if (!std::getline(listing, line)) throw FormatError("sanitized.jsonl is empty");
  json header;
  std::vector<json> records;
  try {
    header = json::parse(line);
    while (std::getline(listing, line))
      if (!line.empty()) records.push_back(json::parse(line));
  } catch (const json::exception& e) {
    throw FormatError(std::string("sanitized.jsonl: ") + e.what());
  }
  if (header.value("mode", "") != "adv") throw DataError("extract needs the output of an adversarial sanitize run");
  const SanitizerModel model = load_bundle((root / "bundle").string());
  if (!model.calibration) throw DataError("bundle has no calibration table");
  const SanitizerConfig& cfg = model.config;
  const bool stored_quantized = header.value("quantized", false);
  const bool quantized = stored_quantized || ctx.quantize_8bit;
  const ExtractMode mode = quantized ? ExtractMode::QuantizedConsistency : ExtractMode::Nearest;
  const std::string source = header.value("source", "");
  DatasetManifest manifest;
  if (cfg.scheme == 2) manifest = load_manifest((fs::path(source) / "manifest.jsonl").string());

  const std::size_t n = records.size();
  std::vector<std::size_t> hits(n, 0), low(n, 0), key_ok(n, 0);
  std::vector<double> mse(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    const json& r = records[i];
    Tensor image = load_float_image((root / r.at("path").get<std::string>()).string());
    if (quantized && !stored_quantized) image = quantize_pixels(image);
    const RecoveryLabels labels{r.at("ep").get<std::size_t>(), r.at("c").get<std::size_t>()};
    const StegoKey derived = derive_key_for_index(labels.y_ep, labels.y_id, cfg.k, *model.calibration, cfg.m_pool);
    key_ok[i] = key_from_json(read_json(root / r.at("key").get<std::string>())) == derived;
    if (cfg.scheme == 1) {
      const auto rec = recover_scheme1(image, labels, *model.calibration, cfg, mode);
      hits[i] = rec.y_id == r.at("id").get<std::size_t>() && !rec.low_confidence;
      low[i] = rec.low_confidence;
    } else {
      const std::string src = r.at("source").get<std::string>();
      const auto it = std::find_if(manifest.records.begin(), manifest.records.end(),
                                   [&](const DatasetRecord& d) { return d.path == src; });
      if (it == manifest.records.end()) throw DataError("source image " + src + " not in manifest");
      const Tensor original = load_image((fs::path(source) / src).string());
      const auto rec = recover_scheme2(image, labels, *model.calibration, cfg, original, mode);
      const Bits truth = encode_factor_code(it->spec, cfg.k, cfg.n_id, cfg.n_ep);
      for (std::size_t b = 0; b < cfg.k; ++b) hits[i] += rec.bits[b] == truth[b];
      mse[i] = *rec.mse;
    }
  });
  std::size_t total_hits = 0, total_low = 0, keys_matching = 0;
  double mean_mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total_hits += hits[i];
    total_low += low[i];
    keys_matching += key_ok[i];
    mean_mse += mse[i];
  }
  json report = {{"command", "extract"},
                 {"scheme", cfg.scheme},
                 {"K", cfg.k},
                 {"n_images", n},
                 {"extract_mode", quantized ? "quantized-consistency" : "nearest"},
                 {"labels", "ground-truth"},
                 {"keys_matching", keys_matching}};
  const double denom = static_cast<double>(std::max<std::size_t>(1, n));
  if (cfg.scheme == 1) {
    report["recovery_rate"] = static_cast<double>(total_hits) / denom;
    report["low_confidence"] = total_low;
  } else {
    report["latent_bit_accuracy"] = static_cast<double>(total_hits) / (denom * static_cast<double>(cfg.k));
    report["image_recons_mse"] = mean_mse / denom;
  }
  return {report, keys_matching == n ? kOk : kCheckFailed};
}

Outcome cmd_merge(const Context& ctx) {
  const DctConfig dct;
  const std::size_t k = ctx.k != 0 ? ctx.k : ctx.n_id;
  const std::size_t t_dim = nn::kLatentDim + ctx.n_id;
  const nn::NetworkGraph s = random_decoder_dct_path(k + t_dim, dct, derive_seed(ctx.seed, 1));
  const nn::NetworkGraph t = random_decoder_dct_path(t_dim, dct, derive_seed(ctx.seed, 2));
  const MergePlan plan = plan_merge(s, t, k);
  const nn::NetworkGraph m = merge_networks(s, t, plan);
  const fs::path root = ensure_dir(ctx.out);
  nn::save_weights(s, (root / "S.sgsn").string());
  nn::save_weights(t, (root / "T.sgsn").string());
  nn::save_weights(m, (root / "merged.sgsn").string());
  write_json(root / "merge_layout.json", merge_layout_json(m, plan));
  return {{{"command", "merge"},
           {"seed", ctx.seed},
           {"K", k},
           {"s_parameters", s.parameter_count()},
           {"t_parameters", t.parameter_count()},
           {"merged_parameters", m.parameter_count()},
           {"nonzero_cross_block", count_nonzero_cross_block(m, plan)},
           {"layers", plan.pairs.size()}},
          kOk};
}

Outcome cmd_verify_merge(const Context& ctx, const VerifyMergeArgs& args) {
  if (args.bundle.empty()) throw ConfigError("--bundle is required");
  const fs::path root(args.bundle);
  const nn::NetworkGraph s = nn::load_weights((root / "S.sgsn").string());
  const nn::NetworkGraph t = nn::load_weights((root / "T.sgsn").string());
  const nn::NetworkGraph m = nn::load_weights((root / "merged.sgsn").string());
  const MergePlan plan = merge_plan_from_layout(read_json(root / "merge_layout.json"));
  const MergeReference ref = merge_reference(s, t, plan, args.samples, ctx.seed);
  const MergeVerification v = verify_merge(ref, m);
  json report = {{"command", "verify-merge"},
                 {"samples", v.samples},
                 {"max_deviation", v.max_deviation},
                 {"tolerance", kMergeTolerance},
                 {"pass", v.pass}};
  bool ok = v.pass;
  if (args.probe_cross > 0) {
    // Detection only needs a couple of inputs.
    MergeReference small = ref;
    const std::size_t keep = std::min<std::size_t>(2, ref.inputs.size());
    small.inputs.resize(keep);
    small.s_outputs.resize(keep);
    small.t_outputs.resize(keep);
    const auto entries = sample_cross_block_entries(m, plan, args.probe_cross, derive_seed(ctx.seed, 77));
    std::size_t detected = 0;
    double weakest = std::numeric_limits<double>::infinity();
    for (const auto& e : entries) {
      nn::NetworkGraph corrupted = m;
      (*nn::trainable_parameters(corrupted.node(e.node).layer).front())[e.index] += 1e-2f;
      const MergeVerification cv = verify_merge(small, corrupted);
      detected += !cv.pass;
      weakest = std::min(weakest, cv.max_deviation);
    }
    report["cross_block_probes"] = entries.size();
    report["cross_block_detected"] = detected;
    report["weakest_detection_deviation"] = entries.empty() ? 0.0 : weakest;
    ok = ok && detected == entries.size();
  }
  return {report, ok ? kOk : kCheckFailed};
}

namespace {

NamedSanitizer sanitizer_by_name(const std::string& name, const Context& ctx, const CheckArgs& args,
                                 const DatasetManifest& manifest) {
  if (name == "pass-through") return pass_through_sanitizer();
  if (name == "fixed-expression") return fixed_expression_sanitizer(manifest.n_id, manifest.n_ep, 0);
  if (name != "honest" && name != "adv") {
    throw ConfigError("--sanitizer must be honest, adv, pass-through or fixed-expression");
  }
  SanitizerConfig cfg = sanitizer_config(ctx, 1, manifest.n_id, manifest.n_ep);
  if (name == "honest") return make_check_sanitizer(make_reference_sanitizer(cfg), false);
  return make_check_sanitizer(
      make_reference_sanitizer(cfg, calibration_for(args.calibration, args.data, ctx.seed)), true);
}

}  // namespace

Outcome cmd_check(const Context& ctx, const CheckArgs& args) {
  const CheckKind kind = check_from_name(args.kind);
  const LoadedSplit train = load_split(args.data, Split::Train);
  const LoadedSplit test = load_split(args.data, Split::Test);
  CheckConfig cc;
  cc.seed = ctx.seed;
  cc.n_id = train.manifest.n_id;
  cc.n_ep = train.manifest.n_ep;
  cc.train.epochs = args.epochs;
  const NamedSanitizer san = sanitizer_by_name(args.sanitizer, ctx, args, train.manifest);
  const CheckReport r = run_check(kind, train.images, test.images, san, cc);
  json report = report_table_json({{r}, {}});
  report["command"] = "check " + args.kind;
  bool ok = true;
  if (ctx.expect_private && kind != CheckKind::Utility) {
    const bool priv = r.accuracy <= r.chance + kPrivacyMargin;
    report["expect_private"] = {{"threshold", r.chance + kPrivacyMargin}, {"private", priv}};
    ok = priv;
  }
  return {report, ok ? kOk : kCheckFailed};
}

Outcome cmd_sweep_k(const Context& ctx, const SweepArgs& args) {
  LoadedSplit test = load_split(args.data, Split::Test);
  if (args.limit > 0 && test.images.size() > args.limit) test.images.resize(args.limit);
  const CalibrationTable table = calibration_for(args.calibration, args.data, ctx.seed);
  SanitizerConfig base;
  base.n_id = test.manifest.n_id;
  base.n_ep = test.manifest.n_ep;
  base.m_pool = ctx.m_pool;
  const auto rows = sweep_k(test.images, table, args.ks, base, ctx.seed, ctx.quantize_8bit);
  bool monotone = true, exact = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    exact = exact && rows[i].latent_bit_accuracy == 1.0;
    if (i > 0 && rows[i].image_recons_mse > rows[i - 1].image_recons_mse) monotone = false;
  }
  json report = report_table_json({{}, rows});
  report["command"] = "sweep-k";
  report["quantized"] = ctx.quantize_8bit;
  report["mse_non_increasing"] = monotone;
  report["lossless_exact"] = exact;
  const bool ok = monotone && (ctx.quantize_8bit || exact);
  return {report, ok ? kOk : kCheckFailed};
}

Outcome cmd_dct_self_test(const Context& ctx, const DctSelfTestArgs& args) {
  const DctConfig cfg;
  const nn::LayerSpec conv = build_dct_conv_layer(cfg);
  const nn::LayerSpec inverse = build_idct_conv_layer(cfg, 1);
  const Tensor basis = dct_basis(cfg.block_size);
  const std::size_t f = cfg.frequencies();
  double ortho = 0.0;
  for (std::size_t a = 0; a < f; ++a)
    for (std::size_t b = 0; b < f; ++b) {
      double dot = 0.0;
      for (std::size_t p = 0; p < f; ++p) dot += static_cast<double>(basis[a * f + p]) * basis[b * f + p];
      ortho = std::max(ortho, std::fabs(dot - (a == b ? 1.0 : 0.0)));
    }
  std::vector<double> conv_err(args.trials), round_err(args.trials), layer_err(args.trials);
  parallel_for(args.trials, [&](std::size_t i) {
    SplitMix64 rng(derive_seed(ctx.seed, i));
    Tensor x({cfg.image_size, cfg.image_size, 1});
    for (float& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor ref = blockwise_dct(x, cfg);
    const Tensor got = nn::apply_layer(conv, {&x});
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      num = std::max(num, std::fabs(static_cast<double>(got[j]) - cfg.pixel_scale * static_cast<double>(ref[j])));
      den = std::max(den, std::fabs(cfg.pixel_scale * static_cast<double>(ref[j])));
    }
    conv_err[i] = num / den;
    round_err[i] = max_abs_diff(blockwise_idct(ref, cfg), x);
    layer_err[i] = max_abs_diff(nn::apply_layer(inverse, {&ref}), x);
  });
  const double c = *std::max_element(conv_err.begin(), conv_err.end());
  const double r = *std::max_element(round_err.begin(), round_err.end());
  const double l = *std::max_element(layer_err.begin(), layer_err.end());
  const bool ok = ortho < 1e-5 && c < 1e-4 && r < 1e-5 && l < 1e-5;
  return {{{"command", "dct self-test"},
           {"trials", args.trials},
           {"orthonormality_error", ortho},
           {"conv_relative_error", c},
           {"roundtrip_max_error", r},
           {"idct_layer_max_error", l},
           {"pass", ok}},
          ok ? kOk : kCheckFailed};
}

Outcome cmd_demo(const Context& ctx, const DemoArgs& args) {
  const fs::path root = ensure_dir(ctx.out);
  auto sub = [&](const std::string& dir) {
    Context c = ctx;
    c.out = (root / dir).string();
    c.json = false;
    return c;
  };
  json steps;
  bool ok = true;
  auto record = [&](const std::string& name, const Context& c, const Outcome& o) {
    write_report(c.out, "report", o.report);
    steps[name] = o.report;
    ok = ok && o.exit_code == kOk;
  };

  const Context data_ctx = sub("dataset");
  record("dataset", data_ctx, cmd_dataset_gen(data_ctx, {args.per_class, "sgif"}));

  const Context cal_ctx = sub("calibration");
  record("calibrate", cal_ctx, cmd_calibrate(cal_ctx, {data_ctx.out}));
  const std::string cal_path = (fs::path(cal_ctx.out) / "calibration.json").string();

  Context adv_ctx = sub("sanitize-lossless");
  record("sanitize", adv_ctx, cmd_sanitize(adv_ctx, {data_ctx.out, cal_path, "adv", 1, "test", "reference", 1}));
  Context ext_ctx = sub("extract-lossless");
  const Outcome lossless = cmd_extract(ext_ctx, {adv_ctx.out});
  record("extract_lossless", ext_ctx, lossless);

  Context q_ctx = sub("sanitize-8bit");
  q_ctx.quantize_8bit = true;
  record("sanitize_8bit", q_ctx, cmd_sanitize(q_ctx, {data_ctx.out, cal_path, "adv", 1, "test", "reference", 1}));
  Context qext_ctx = sub("extract-8bit");
  const Outcome quantized = cmd_extract(qext_ctx, {q_ctx.out});
  record("extract_8bit", qext_ctx, quantized);

  // Privacy and utility checks share one in-memory corpus.
  const LoadedSplit train = load_split(data_ctx.out, Split::Train);
  const LoadedSplit test = load_split(data_ctx.out, Split::Test);
  const CalibrationTable table = load_calibration(cal_path);
  SanitizerConfig scfg = sanitizer_config(ctx, 1, train.manifest.n_id, train.manifest.n_ep);
  const NamedSanitizer honest = make_check_sanitizer(make_reference_sanitizer(scfg), false);
  const NamedSanitizer adv = make_check_sanitizer(make_reference_sanitizer(scfg, table), true);
  CheckConfig cc;
  cc.seed = ctx.seed;
  cc.n_id = train.manifest.n_id;
  cc.n_ep = train.manifest.n_ep;
  // The demo corpus is small, so the discriminators get more passes over it.
  cc.train.epochs = 6;
  ReportTable checks;
  checks.checks = run_weak_checks(train.images, test.images, {honest, adv}, cc);
  for (CheckKind kind : {CheckKind::Strong, CheckKind::Utility})
    for (const auto* s : {&honest, &adv}) checks.checks.push_back(run_check(kind, train.images, test.images, *s, cc));
  const Context check_ctx = sub("checks");
  record("checks", check_ctx, {report_table_json(checks), kOk});

  const Context merge_ctx = sub("merge");
  record("merge", merge_ctx, cmd_merge(merge_ctx));
  record("verify_merge", merge_ctx, cmd_verify_merge(merge_ctx, {merge_ctx.out, 10, 1}));

  const Context sweep_ctx = sub("sweep-k");
  record("sweep_k", sweep_ctx, cmd_sweep_k(sweep_ctx, {data_ctx.out, cal_path, {18, 24, 30, 36, 42, 48, 54, 60}, 56}));

  const Context dct_ctx = sub("dct");
  record("dct_self_test", dct_ctx, cmd_dct_self_test(dct_ctx, {20}));

  json summary = {{"recovery_lossless", lossless.report.at("recovery_rate")},
                  {"recovery_8bit", quantized.report.at("recovery_rate")}};
  for (const auto& r : checks.checks) summary[check_name(r.check) + "_" + r.sanitizer] = r.accuracy;
  const bool exact = lossless.report.at("recovery_rate").get<double>() == 1.0;
  json report = {{"command", "demo"},
                 {"seed", ctx.seed},
                 {"modules_used", {"tensor-nn", "dct", "stego", "merge", "pipeline", "checks", "data", "cli"}},
                 {"summary", summary},
                 {"steps", steps}};
  return {report, ok && exact ? kOk : kCheckFailed};
}

}  // namespace stegosan::app
