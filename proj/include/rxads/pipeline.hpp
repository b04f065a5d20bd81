// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rxads/can_io.hpp"
#include "rxads/explainer.hpp"
#include "rxads/features.hpp"
#include "rxads/rae.hpp"
#include "rxads/synth.hpp"

namespace rxads::cli {

enum class CaptureRole { Baseline, Attack };

struct CaptureSpec {
  std::string name;
  std::filesystem::path path;
  can::CaptureFormat format = can::CaptureFormat::Normalized;
  CaptureRole role = CaptureRole::Attack;
  std::string class_tag;
};

struct SynthSpec {
  double baseline_duration = 72.0;
  double attack_duration = 16.0;
  double dos_rate = 4000.0;
  double fuzzy_rate = 1000.0;
  can::IdSpace fuzzy_ids;
  can::SynthConfig bus;
};

/// One experiment, read from a JSON file. Every random stream is derived
/// from `seed`, which has no default.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::vector<CaptureSpec> captures;
  SynthSpec synth;
  features::WindowSpec window;
  bool include_payload = false;
  std::vector<int> hidden_dims{64, 32, 16, 32, 64};
  rae::SkipPlacement skips = rae::SkipPlacement::NextEqualWidth;
  double l1_coeff = 1e-5;
  rae::TrainConfig train;
  double split_ratio = 0.7;
  double quantile = 0.999999;
  double threshold_scale = 1.0;
  explain::SolverConfig solver;
  std::size_t max_explanations = 0;  // per capture; 0 = explain every anomaly
  int histogram_bins = 50;
  unsigned jobs = 1;
  bool strict = false;
};

// Seed offsets for the derived random streams.
struct Seeds {
  std::uint64_t synth_baseline, synth_dos_bus, synth_fuzzy_bus, inject_dos, inject_fuzzy, split, init, shuffle;
};
Seeds derive_seeds(std::uint64_t seed);

/// Relative paths resolve against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<double> window_size;
  std::optional<double> quantile;
  std::optional<double> threshold_scale;
  std::optional<unsigned> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
};
void apply_overrides(RunConfig& config, const Overrides& overrides);

/// Checks value ranges and that every input the command reads exists.
void validate_for(std::string_view command, const RunConfig& config);

// Output layout under output_dir.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path captures() const { return root / "captures"; }
  std::filesystem::path features() const { return root / "features"; }
  std::filesystem::path schema() const { return features() / "schema.json"; }
  std::filesystem::path feature_csv(const std::string& name) const { return features() / (name + ".csv"); }
  std::filesystem::path model() const { return root / "model"; }
  std::filesystem::path bundle() const { return model() / "bundle.json"; }
  std::filesystem::path split() const { return model() / "split.json"; }
  std::filesystem::path detect() const { return root / "detect"; }
  std::filesystem::path detect_csv(const std::string& name) const { return detect() / (name + ".csv"); }
  std::filesystem::path explain() const { return root / "explain"; }
  std::filesystem::path eval() const { return root / "eval"; }
};

void cmd_synth(const RunConfig& config);
void cmd_features(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_detect(const RunConfig& config);
void cmd_explain(const RunConfig& config);
void cmd_eval(const RunConfig& config);
void cmd_report(const RunConfig& config);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Validates, runs the command and maps failures onto exit codes. A failed
/// command leaves `<output_dir>/<command>.FAILED` holding the error text;
/// success removes any stale marker. `run` chains every stage.
int run_command(std::string_view command, const RunConfig& config);

// Detection CSV rows as written by cmd_detect.
struct DetectionRow {
  std::int64_t window_id = 0;
  double window_start = 0.0;
  double error = 0.0;
  detect::Prediction predicted = detect::Prediction::Normal;
  features::WindowLabel window_label = features::WindowLabel::Normal;
};
std::vector<DetectionRow> read_detection_csv(const std::filesystem::path& path);

}  // namespace rxads::cli
