#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace stegosan::app {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kCheckFailed = 3 };

/// Flags shared by every command.
struct Context {
  std::uint64_t seed = 1;
  std::string out = "stegosan-out";
  bool json = false;
  std::size_t k = 0;  // 0: scheme default
  std::size_t m_pool = 0;  // 0: 4K
  std::size_t n_id = 8;
  std::size_t n_ep = 7;
  bool quantize_8bit = false;
  bool expect_private = false;
};

struct Outcome {
  nlohmann::json report;
  int exit_code = kOk;
};

struct DatasetArgs {
  std::size_t per_class = 20;
  std::string format = "sgif";
};
Outcome cmd_dataset_gen(const Context& ctx, const DatasetArgs& args);

struct CalibrateArgs {
  std::string data;
};
Outcome cmd_calibrate(const Context& ctx, const CalibrateArgs& args);

struct SanitizeArgs {
  std::string data;
  std::string calibration;
  std::string mode = "adv";
  int scheme = 1;
  std::string split = "test";
  std::string kind = "reference";
  std::uint64_t weight_seed = 1;
};
Outcome cmd_sanitize(const Context& ctx, const SanitizeArgs& args);

struct ExtractArgs {
  std::string input;
};
Outcome cmd_extract(const Context& ctx, const ExtractArgs& args);

Outcome cmd_merge(const Context& ctx);

struct VerifyMergeArgs {
  std::string bundle;
  std::size_t samples = 50;
  std::size_t probe_cross = 0;
};
Outcome cmd_verify_merge(const Context& ctx, const VerifyMergeArgs& args);

struct CheckArgs {
  std::string kind;
  std::string data;
  std::string calibration;
  std::string sanitizer = "honest";
  std::size_t epochs = 4;
};
Outcome cmd_check(const Context& ctx, const CheckArgs& args);

struct SweepArgs {
  std::string data;
  std::string calibration;
  std::vector<std::size_t> ks{18, 24, 30, 36, 42, 48, 54, 60};
  std::size_t limit = 0;  // 0: whole test split
};
Outcome cmd_sweep_k(const Context& ctx, const SweepArgs& args);

struct DctSelfTestArgs {
  std::size_t trials = 100;
};
Outcome cmd_dct_self_test(const Context& ctx, const DctSelfTestArgs& args);

struct DemoArgs {
  std::size_t per_class = 20;
};
Outcome cmd_demo(const Context& ctx, const DemoArgs& args);

/// Writes <out>/<name>.json and prints the report (raw JSON with --json,
/// an indented summary otherwise).
void publish(const Context& ctx, const std::string& name, const Outcome& outcome);

}  // namespace stegosan::app
