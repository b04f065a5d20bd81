// SPDX-License-Identifier: Apache-2.0
// Command-line driver for the RX-ADS pipeline.
#include <cstdlib>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rxads/error.hpp"
#include "rxads/pipeline.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rxads");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("RXADS_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honour it when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"RX-ADS: CAN bus anomaly detection with counterfactual explanations"};
  app.require_subcommand(1);

  std::string config_path;
  rxads::cli::Overrides overrides;
  std::optional<std::string> out;
  app.add_option("--config", config_path, "Run-config JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--window-size", overrides.window_size, "Window size in seconds");
  app.add_option("--quantile", overrides.quantile, "Calibration quantile q");
  app.add_option("--threshold-scale", overrides.threshold_scale, "Multiplier applied to th");
  app.add_option("--jobs", overrides.jobs, "Worker threads");
  app.add_option("--seed", overrides.seed, "Master seed");
  app.add_option("--out", out, "Output directory");
  app.fallthrough();

  for (const char* name : {"synth", "features", "train", "detect", "explain", "eval", "report", "run"})
    app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : rxads::cli::kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  rxads::cli::RunConfig config;
  try {
    config = rxads::cli::load_run_config(config_path);
    if (out) overrides.output_dir = *out;
    rxads::cli::apply_overrides(config, overrides);
  } catch (const rxads::Error& e) {
    spdlog::error("{}", e.what());
    return rxads::cli::kExitConfig;
  }
  return rxads::cli::run_command(command, config);
}
