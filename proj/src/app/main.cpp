#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "stegosan/error.hpp"

using namespace stegosan::app;

int main(int argc, char** argv) {
  CLI::App app{"stegosan: DCT-domain secret channels in image sanitizers, merging and privacy checks"};
  app.require_subcommand(1);
  app.fallthrough();

  Context ctx;
  app.add_option("--seed", ctx.seed, "Seed for all randomness");
  app.add_option("--out", ctx.out, "Output directory");
  app.add_flag("--json", ctx.json, "Print only the JSON report on stdout");
  app.add_option("--k", ctx.k, "Secret bit length K (default: N_id for scheme 1, 18 for scheme 2)");
  app.add_option("--m-pool", ctx.m_pool, "Candidate pool size M (default 4K)");
  app.add_option("--n-id", ctx.n_id, "Number of identities")->check(CLI::Range(2, 1 << 16));
  app.add_option("--n-ep", ctx.n_ep, "Number of expressions")->check(CLI::Range(2, 1 << 16));
  app.add_flag("--quantize-8bit", ctx.quantize_8bit, "Round stego pixels to integers before storage/extraction");
  app.add_flag("--expect-private", ctx.expect_private, "Exit 3 if a privacy check finds identity above chance + 0.15");

  std::function<Outcome()> run;
  std::string name;

  auto* dataset = app.add_subcommand("dataset", "Synthetic face dataset");
  dataset->require_subcommand(1);
  DatasetArgs dataset_args;
  auto* gen = dataset->add_subcommand("gen", "Render a stratified dataset and manifest");
  gen->add_option("--per-class", dataset_args.per_class, "Images per (id, ep) class");
  gen->add_option("--format", dataset_args.format, "Image format")->check(CLI::IsMember({"sgif", "ppm"}));
  gen->callback([&] {
    name = "dataset-gen";
    run = [&] { return cmd_dataset_gen(ctx, dataset_args); };
  });

  CalibrateArgs calibrate_args;
  auto* calibrate = app.add_subcommand("calibrate", "Rank mid-frequency DCT positions on sanitized training images");
  calibrate->add_option("--data", calibrate_args.data, "Dataset directory")->required();
  calibrate->callback([&] {
    name = "calibrate";
    run = [&] { return cmd_calibrate(ctx, calibrate_args); };
  });

  SanitizeArgs sanitize_args;
  auto* sanitize = app.add_subcommand("sanitize", "Run the honest or adversarial sanitizer over a split");
  sanitize->add_option("--data", sanitize_args.data, "Dataset directory")->required();
  sanitize->add_option("--calibration", sanitize_args.calibration, "Calibration table (computed if absent)");
  sanitize->add_option("--mode", sanitize_args.mode, "honest | adv")->check(CLI::IsMember({"honest", "adv"}));
  sanitize->add_option("--scheme", sanitize_args.scheme, "1 (one-hot ID) | 2 (factor code)")
      ->check(CLI::IsMember({1, 2}));
  sanitize->add_option("--split", sanitize_args.split, "train | test")->check(CLI::IsMember({"train", "test"}));
  sanitize->add_option("--kind", sanitize_args.kind, "reference | nn")->check(CLI::IsMember({"reference", "nn"}));
  sanitize->add_option("--weight-seed", sanitize_args.weight_seed, "Seed for nn-kind weights");
  sanitize->callback([&] {
    name = "sanitize";
    run = [&] { return cmd_sanitize(ctx, sanitize_args); };
  });

  ExtractArgs extract_args;
  auto* extract = app.add_subcommand("extract", "Recover secrets from a sanitize output directory");
  extract->add_option("--input", extract_args.input, "Output directory of `sanitize --mode adv`")->required();
  extract->callback([&] {
    name = "extract";
    run = [&] { return cmd_extract(ctx, extract_args); };
  });

  auto* merge = app.add_subcommand("merge", "Merge a secret path and a decoder-DCT path into one network");
  merge->callback([&] {
    name = "merge";
    run = [&] { return cmd_merge(ctx); };
  });

  VerifyMergeArgs verify_args;
  auto* verify = app.add_subcommand("verify-merge", "Check a merged network against its two paths");
  verify->add_option("--bundle", verify_args.bundle, "Directory written by `merge`")->required();
  verify->add_option("--samples", verify_args.samples, "Random inputs")->check(CLI::PositiveNumber);
  verify->add_option("--probe-cross", verify_args.probe_cross, "Cross-block weights to corrupt per layer");
  verify->callback([&] {
    name = "verify-merge";
    run = [&] { return cmd_verify_merge(ctx, verify_args); };
  });

  CheckArgs check_args;
  auto* check = app.add_subcommand("check", "Weak/strong privacy check or utility check");
  check->add_option("kind", check_args.kind, "weak | strong | utility")
      ->required()
      ->check(CLI::IsMember({"weak", "strong", "utility"}));
  check->add_option("--data", check_args.data, "Dataset directory")->required();
  check->add_option("--calibration", check_args.calibration, "Calibration table (adv sanitizer)");
  check->add_option("--sanitizer", check_args.sanitizer, "honest | adv | pass-through | fixed-expression")
      ->check(CLI::IsMember({"honest", "adv", "pass-through", "fixed-expression"}));
  check->add_option("--epochs", check_args.epochs, "Discriminator epochs")->check(CLI::PositiveNumber);
  check->callback([&] {
    name = "check-" + check_args.kind;
    run = [&] { return cmd_check(ctx, check_args); };
  });

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep-k", "Scheme-2 latent length sweep");
  sweep->add_option("--data", sweep_args.data, "Dataset directory")->required();
  sweep->add_option("--calibration", sweep_args.calibration, "Calibration table (computed if absent)");
  sweep->add_option("--ks", sweep_args.ks, "Bit lengths")->delimiter(',');
  sweep->add_option("--limit", sweep_args.limit, "Use at most this many test images");
  sweep->callback([&] {
    name = "sweep-k";
    run = [&] { return cmd_sweep_k(ctx, sweep_args); };
  });

  DctSelfTestArgs dct_args;
  auto* dct = app.add_subcommand("dct", "DCT utilities");
  dct->require_subcommand(1);
  auto* self_test = dct->add_subcommand("self-test", "Conv-layer DCT against the reference transform");
  self_test->add_option("--trials", dct_args.trials, "Random images")->check(CLI::PositiveNumber);
  self_test->callback([&] {
    name = "dct-self-test";
    run = [&] { return cmd_dct_self_test(ctx, dct_args); };
  });

  DemoArgs demo_args;
  auto* demo = app.add_subcommand("demo", "End-to-end run across every module");
  demo->add_option("--per-class", demo_args.per_class, "Images per class")->check(CLI::Range(5, 1000));
  demo->callback([&] {
    name = "demo";
    run = [&] { return cmd_demo(ctx, demo_args); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const Outcome outcome = run();
    publish(ctx, name, outcome);
    return outcome.exit_code;
  } catch (const stegosan::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
}
