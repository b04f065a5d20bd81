// SPDX-License-Identifier: Apache-2.0
#include "rxads/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rxads/bundle.hpp"
#include "rxads/detector.hpp"
#include "rxads/error.hpp"
#include "rxads/metrics.hpp"
#include "rxads/scaler.hpp"
#include "rxads/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rxads::cli {

Seeds derive_seeds(std::uint64_t seed) {
  // splitmix64 keeps neighbouring master seeds from producing related streams
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  Seeds s{};
  std::uint64_t state = seed;
  auto next = [&] {
    state = mix(state);
    return state;
  };
  s.synth_baseline = next();
  s.synth_dos_bus = next();
  s.synth_fuzzy_bus = next();
  s.inject_dos = next();
  s.inject_fuzzy = next();
  s.split = next();
  s.init = next();
  s.shuffle = next();
  return s;
}

namespace {

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  const json& s = j.at(key);
  if (!s.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", key));
  return s;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

CaptureRole parse_role(const std::string& s) {
  if (s == "baseline") return CaptureRole::Baseline;
  if (s == "attack") return CaptureRole::Attack;
  throw ConfigError("capture role must be 'baseline' or 'attack', got '" + s + "'");
}

rae::SkipPlacement parse_skips(const std::string& s) {
  if (s == "none") return rae::SkipPlacement::None;
  if (s == "next_equal_width") return rae::SkipPlacement::NextEqualWidth;
  throw ConfigError("model.skips must be 'none' or 'next_equal_width', got '" + s + "'");
}

std::vector<CaptureSpec> default_captures(const fs::path& out) {
  const Layout layout{out};
  return {
      {"baseline", layout.captures() / "baseline.csv", can::CaptureFormat::Normalized, CaptureRole::Baseline, "Normal"},
      {"dos", layout.captures() / "dos.csv", can::CaptureFormat::Normalized, CaptureRole::Attack, "DoS"},
      {"fuzzy", layout.captures() / "fuzzy.csv", can::CaptureFormat::Normalized, CaptureRole::Attack, "Fuzzy"},
  };
}

const CaptureSpec& baseline_capture(const RunConfig& c) {
  for (const auto& cap : c.captures)
    if (cap.role == CaptureRole::Baseline) return cap;
  throw ConfigError("no capture has role 'baseline'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ConfigError(fmt::format("{} not found: {}", what, p.string()));
}

features::WindowSpec window_for(const RunConfig& c) { return c.window; }

features::FeatureSchema load_schema(const Layout& layout) {
  return features::schema_from_json(read_json(layout.schema()));
}

struct SplitIds {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> test;
};

SplitIds load_split(const Layout& layout) {
  const json j = read_json(layout.split());
  try {
    return {j.at("train").get<std::vector<std::int64_t>>(), j.at("test").get<std::vector<std::int64_t>>()};
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", layout.split().string(), e.what()));
  }
}

std::vector<features::FeatureVector> select_ids(const std::vector<features::FeatureVector>& rows,
                                                const std::vector<std::int64_t>& ids) {
  std::map<std::int64_t, const features::FeatureVector*> by_id;
  for (const auto& r : rows) by_id[r.window_id] = &r;
  std::vector<features::FeatureVector> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw FormatError(fmt::format("window {} missing from feature file", id));
    out.push_back(*it->second);
  }
  return out;
}

std::vector<std::int64_t> window_ids(std::span<const features::FeatureVector> rows) {
  std::vector<std::int64_t> ids;
  ids.reserve(rows.size());
  for (const auto& r : rows) ids.push_back(r.window_id);
  return ids;
}

detect::Threshold threshold_for(const ModelBundle& bundle, const RunConfig& c) {
  detect::Threshold t = bundle.threshold;
  t.scale = c.threshold_scale;
  return t;
}

json threshold_json(const detect::Threshold& t) {
  return {{"th", t.th}, {"quantile", t.quantile}, {"scale", t.scale}, {"effective", t.effective()}};
}

void check_range(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  const bool seed_ok = j.contains("seed") && (j.at("seed").is_number_unsigned() ||
                                              (j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() >= 0));
  if (!seed_ok)
    throw ConfigError("run config needs a non-negative integer 'seed'");

  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = resolve(get_or<std::string>(j, "output_dir", "out"), base_dir);
  c.jobs = get_or<unsigned>(j, "jobs", 1);
  c.strict = get_or<bool>(j, "strict", false);

  const json& synth = section(j, "synth");
  c.synth.baseline_duration = get_or(synth, "baseline_duration", c.synth.baseline_duration);
  c.synth.attack_duration = get_or(synth, "attack_duration", c.synth.attack_duration);
  c.synth.dos_rate = get_or(synth, "dos_rate", c.synth.dos_rate);
  c.synth.fuzzy_rate = get_or(synth, "fuzzy_rate", c.synth.fuzzy_rate);
  c.synth.fuzzy_ids.lo = get_or(synth, "fuzzy_id_lo", c.synth.fuzzy_ids.lo);
  c.synth.fuzzy_ids.hi = get_or(synth, "fuzzy_id_hi", c.synth.fuzzy_ids.hi);
  c.synth.bus.instant_reply_probability =
      get_or(synth, "instant_reply_probability", c.synth.bus.instant_reply_probability);

  const json& window = section(j, "window");
  c.window.win_size = get_or(window, "size", c.window.win_size);
  if (window.contains("start") && !window.at("start").is_null()) c.window.start_time = window.at("start").get<double>();

  c.include_payload = get_or(section(j, "schema"), "include_payload", false);

  const json& model = section(j, "model");
  c.hidden_dims = get_or(model, "hidden_dims", c.hidden_dims);
  c.skips = parse_skips(get_or<std::string>(model, "skips", "next_equal_width"));
  c.l1_coeff = get_or(model, "l1_coeff", c.l1_coeff);

  const json& train = section(j, "train");
  c.train.epochs = get_or(train, "epochs", c.train.epochs);
  c.train.batch_size = get_or(train, "batch_size", c.train.batch_size);
  c.train.learning_rate = get_or(train, "learning_rate", c.train.learning_rate);
  c.train.beta1 = get_or(train, "beta1", c.train.beta1);
  c.train.beta2 = get_or(train, "beta2", c.train.beta2);
  c.train.epsilon = get_or(train, "epsilon", c.train.epsilon);
  if (train.contains("patience") && !train.at("patience").is_null()) c.train.patience = train.at("patience").get<int>();
  c.split_ratio = get_or(train, "split_ratio", c.split_ratio);

  const json& det = section(j, "detector");
  c.quantile = get_or(det, "quantile", c.quantile);
  c.threshold_scale = get_or(det, "threshold_scale", c.threshold_scale);

  const json& ex = section(j, "explain");
  c.solver.margin = get_or(ex, "margin", c.solver.margin);
  c.solver.learning_rate = get_or(ex, "learning_rate", c.solver.learning_rate);
  c.solver.lambda_initial = get_or(ex, "lambda_initial", c.solver.lambda_initial);
  c.solver.lambda_growth = get_or(ex, "lambda_growth", c.solver.lambda_growth);
  c.solver.lambda_max = get_or(ex, "lambda_max", c.solver.lambda_max);
  c.solver.max_iterations = get_or(ex, "max_iterations", c.solver.max_iterations);
  c.solver.step_tolerance = get_or(ex, "step_tolerance", c.solver.step_tolerance);
  c.solver.restart_from_input = get_or(ex, "restart_from_input", c.solver.restart_from_input);
  c.max_explanations = get_or<std::size_t>(ex, "max_samples", 0);
  c.histogram_bins = get_or(ex, "histogram_bins", c.histogram_bins);

  if (j.contains("captures")) {
    if (!j.at("captures").is_array()) throw ConfigError("'captures' must be an array");
    for (const auto& cj : j.at("captures")) {
      CaptureSpec cap;
      cap.name = get_or<std::string>(cj, "name", "");
      const auto path = get_or<std::string>(cj, "path", "");
      if (cap.name.empty() || path.empty()) throw ConfigError("every capture needs 'name' and 'path'");
      cap.path = resolve(path, base_dir);
      try {
        cap.format = can::parse_capture_format(get_or<std::string>(cj, "format", "normalized"));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      cap.role = parse_role(get_or<std::string>(cj, "role", "attack"));
      cap.class_tag = get_or<std::string>(cj, "class_tag", cap.name);
      c.captures.push_back(std::move(cap));
    }
  } else {
    c.captures = default_captures(c.output_dir);
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_run_config(j, path.parent_path());
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.output_dir) {
    // Synthetic captures live under the output directory and move with it.
    const auto old_defaults = default_captures(c.output_dir);
    for (auto& cap : c.captures)
      for (const auto& d : old_defaults)
        if (cap.name == d.name && cap.path == d.path) cap.path = Layout{*o.output_dir}.captures() / d.path.filename();
    c.output_dir = *o.output_dir;
  }
  if (o.window_size) c.window.win_size = *o.window_size;
  if (o.quantile) c.quantile = *o.quantile;
  if (o.threshold_scale) c.threshold_scale = *o.threshold_scale;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.seed) c.seed = *o.seed;
}

void validate_for(std::string_view command, const RunConfig& c) {
  check_range(!c.output_dir.empty(), "output_dir must be set");
  check_range(std::isfinite(c.window.win_size) && c.window.win_size > 0.0, "window size must be > 0");
  check_range(c.quantile > 0.0 && c.quantile < 1.0, "quantile must lie in (0, 1)");
  check_range(std::isfinite(c.threshold_scale) && c.threshold_scale > 0.0, "threshold scale must be > 0");
  check_range(c.jobs >= 1, "jobs must be >= 1");
  check_range(c.split_ratio > 0.0 && c.split_ratio < 1.0, "split_ratio must lie in (0, 1)");
  check_range(c.train.epochs >= 1 && c.train.batch_size >= 1 && c.train.learning_rate > 0.0,
              "train epochs, batch_size and learning_rate must be positive");
  check_range(c.l1_coeff >= 0.0, "l1_coeff must be >= 0");
  check_range(c.solver.margin >= 0.0 && c.solver.margin < 1.0, "explain.margin must lie in [0, 1)");
  check_range(c.solver.lambda_growth > 1.0 && c.solver.lambda_initial > 0.0 && c.solver.max_iterations >= 1,
              "explain penalty schedule is invalid");
  check_range(c.histogram_bins >= 1, "histogram_bins must be >= 1");
  for (int w : c.hidden_dims) check_range(w >= 1, "hidden_dims entries must be >= 1");
  check_range(!c.hidden_dims.empty(), "hidden_dims must not be empty");

  std::set<std::string> names;
  for (const auto& cap : c.captures) {
    check_range(names.insert(cap.name).second, "duplicate capture name '" + cap.name + "'");
    check_range(cap.name.find_first_of("/\\") == std::string::npos, "capture name must not contain path separators");
  }

  const Layout layout{c.output_dir};
  if (command == "synth") {
    check_range(c.synth.baseline_duration > 0.0 && c.synth.attack_duration > 0.0, "synth durations must be > 0");
    check_range(c.synth.dos_rate > 0.0 && c.synth.fuzzy_rate > 0.0, "synth attack rates must be > 0");
    check_range(c.synth.fuzzy_ids.lo <= c.synth.fuzzy_ids.hi && c.synth.fuzzy_ids.hi <= can::kMaxCanId,
                "fuzzy id range is invalid");
    return;
  }
  if (command == "features") {
    baseline_capture(c);
    for (const auto& cap : c.captures) require_file(cap.path, "capture");
    return;
  }
  if (command == "train") {
    require_file(layout.schema(), "feature schema");
    require_file(layout.feature_csv(baseline_capture(c).name), "baseline features");
    return;
  }
  if (command == "detect") {
    require_file(layout.bundle(), "model bundle");
    require_file(layout.split(), "train/test split");
    for (const auto& cap : c.captures) require_file(layout.feature_csv(cap.name), "features");
    return;
  }
  if (command == "explain") {
    require_file(layout.bundle(), "model bundle");
    require_file(layout.split(), "train/test split");
    for (const auto& cap : c.captures) {
      require_file(layout.feature_csv(cap.name), "features");
      if (cap.role == CaptureRole::Attack) require_file(layout.detect_csv(cap.name), "detection results");
    }
    return;
  }
  if (command == "eval") {
    for (const auto& cap : c.captures) require_file(layout.detect_csv(cap.name), "detection results");
    return;
  }
  if (command == "report") {
    require_file(layout.eval() / "metrics.json", "metrics");
    return;
  }
  if (command == "run") {
    validate_for("synth", c);
    return;
  }
  throw ConfigError("unknown command '" + std::string(command) + "'");
}

void cmd_synth(const RunConfig& c) {
  const Layout layout{c.output_dir};
  const Seeds seeds = derive_seeds(c.seed);
  ensure_dir(layout.captures());

  const auto baseline = can::synth_baseline(c.synth.baseline_duration, seeds.synth_baseline, c.synth.bus);
  can::write_normalized_csv(layout.captures() / "baseline.csv", baseline);

  const auto dos_bus = can::synth_baseline(c.synth.attack_duration, seeds.synth_dos_bus, c.synth.bus);
  const auto dos = can::inject_dos(dos_bus, c.synth.dos_rate, seeds.inject_dos);
  can::write_normalized_csv(layout.captures() / "dos.csv", dos);

  const auto fuzzy_bus = can::synth_baseline(c.synth.attack_duration, seeds.synth_fuzzy_bus, c.synth.bus);
  const auto fuzzy = can::inject_fuzzy(fuzzy_bus, c.synth.fuzzy_rate, c.synth.fuzzy_ids, seeds.inject_fuzzy);
  can::write_normalized_csv(layout.captures() / "fuzzy.csv", fuzzy);

  spdlog::info("synth: baseline {} frames, dos {} frames, fuzzy {} frames", baseline.size(), dos.size(),
               fuzzy.size());
}

void cmd_features(const RunConfig& c) {
  const Layout layout{c.output_dir};
  const can::LoadOptions load{c.strict};

  // Load everything first so a bad capture fails before any file is written.
  std::vector<can::Capture> captures;
  captures.reserve(c.captures.size());
  for (const auto& cap : c.captures) {
    captures.push_back(can::load_capture(cap.path, cap.format, load));
    const auto& meta = captures.back().meta;
    if (meta.malformed_lines > 0)
      spdlog::warn("{}: {} of {} lines malformed (first: {})", cap.name, meta.malformed_lines, meta.total_lines,
                   meta.first_error);
    if (captures.back().frames.empty()) throw EmptyCapture("capture '" + cap.name + "' has no frames");
  }

  const auto& base = baseline_capture(c);
  std::size_t base_index = 0;
  for (std::size_t i = 0; i < c.captures.size(); ++i)
    if (c.captures[i].name == base.name) base_index = i;
  const auto schema = features::fit_schema(captures[base_index].frames, c.include_payload);

  ensure_dir(layout.features());
  write_text(layout.schema(), features::schema_to_json(schema).dump(2) + "\n");
  for (std::size_t i = 0; i < c.captures.size(); ++i) {
    const auto rows = features::extract_features(captures[i].frames, window_for(c), schema, c.jobs);
    features::write_feature_csv(layout.feature_csv(c.captures[i].name), schema, rows);
    spdlog::info("features: {} -> {} windows x {} features", c.captures[i].name, rows.size(), schema.size());
  }
}

void cmd_train(const RunConfig& c) {
  const Layout layout{c.output_dir};
  const Seeds seeds = derive_seeds(c.seed);
  const auto schema = load_schema(layout);
  const auto rows = features::read_feature_csv(layout.feature_csv(baseline_capture(c).name), schema);
  if (rows.size() < 2) throw EmptyInput("baseline capture yields fewer than two windows");

  const auto parts = preprocess::split(rows.size(), c.split_ratio, seeds.split);
  if (parts.train.empty() || parts.test.empty()) throw EmptyInput("train/test split leaves an empty side");
  std::vector<features::FeatureVector> train_rows, test_rows;
  for (auto i : parts.train) train_rows.push_back(rows[i]);
  for (auto i : parts.test) test_rows.push_back(rows[i]);

  const Eigen::MatrixXd raw_train = preprocess::stack(train_rows);
  const auto scaler = preprocess::fit_scaler(raw_train);
  const Eigen::MatrixXd train = preprocess::transform(raw_train, scaler);

  std::vector<int> dims;
  dims.push_back(static_cast<int>(schema.size()));
  dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  dims.push_back(static_cast<int>(schema.size()));
  auto model = rae::init_model(dims, c.l1_coeff, seeds.init, c.skips);

  rae::TrainConfig tc = c.train;
  tc.shuffle_seed = seeds.shuffle;
  spdlog::info("train: {} train / {} test windows, {} parameters", train_rows.size(), test_rows.size(),
               model.parameter_count());
  auto result = rae::fit(std::move(model), train, tc);

  const Eigen::VectorXd errors = rae::sample_errors(result.model, train);
  const auto threshold =
      detect::calibrate(std::span<const double>(errors.data(), static_cast<std::size_t>(errors.size())), c.quantile);
  spdlog::info("train: final loss {}, th {}", result.history.epoch_loss.back(), threshold.th);

  ensure_dir(layout.model());
  save_bundle(layout.bundle(), ModelBundle{schema, scaler, result.model, threshold});

  json split = {{"ratio", c.split_ratio}, {"train", window_ids(train_rows)}, {"test", window_ids(test_rows)}};
  write_text(layout.split(), split.dump() + "\n");

  std::string history = "epoch,loss\n";
  history += fmt::format("0,{}\n", text::format_real(result.history.initial_loss));
  for (std::size_t e = 0; e < result.history.epoch_loss.size(); ++e)
    history += fmt::format("{},{}\n", e + 1, text::format_real(result.history.epoch_loss[e]));
  write_text(layout.model() / "history.csv", history);
}

void cmd_detect(const RunConfig& c) {
  const Layout layout{c.output_dir};
  const auto bundle = load_bundle(layout.bundle());
  const auto split = load_split(layout);
  const auto threshold = threshold_for(bundle, c);
  const std::set<std::int64_t> train_ids(split.train.begin(), split.train.end());

  // Score everything in memory first, then write.
  std::vector<std::pair<std::string, std::string>> outputs;
  json summary = {{"threshold", threshold_json(threshold)}, {"captures", json::object()}};
  for (const auto& cap : c.captures) {
    auto rows = features::read_feature_csv(layout.feature_csv(cap.name), bundle.schema);
    if (cap.role == CaptureRole::Baseline) {
      // Only held-out baseline windows; training windows are calibration data.
      std::erase_if(rows, [&](const auto& r) { return train_ids.count(r.window_id) > 0; });
    }
    const Eigen::MatrixXd scaled = preprocess::transform(preprocess::stack(rows), bundle.scaler);
    const auto ids = window_ids(rows);
    const auto results = detect::score(bundle.model, scaled, ids, threshold, c.jobs);

    std::string csv = "window_id,window_start,J,predicted,window_label\n";
    std::size_t anomalies = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      csv += fmt::format("{},{},{},{},{}\n", rows[i].window_id, text::format_real(rows[i].window_start),
                         text::format_real(results[i].error), detect::to_string(results[i].predicted),
                         features::to_string(rows[i].window_label));
      if (results[i].predicted == detect::Prediction::Anomaly) ++anomalies;
    }
    summary["captures"][cap.name] = {{"windows", rows.size()}, {"anomalies", anomalies}};
    outputs.emplace_back(layout.detect_csv(cap.name).string(), std::move(csv));
    spdlog::info("detect: {} -> {} of {} windows anomalous", cap.name, anomalies, rows.size());
  }
  ensure_dir(layout.detect());
  for (const auto& [path, body] : outputs) write_text(path, body);
  write_text(layout.detect() / "summary.json", summary.dump(2) + "\n");
}

std::vector<DetectionRow> read_detection_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "window_id,window_start,J,predicted,window_label")
    throw FormatError(path.string() + ": unexpected detection header");
  std::vector<DetectionRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    auto fail = [&] { return FormatError(fmt::format("{}:{}: bad detection row", path.string(), lineno)); };
    if (f.size() != 5) throw fail();
    DetectionRow r;
    const auto id = text::parse_int(f[0]);
    const auto start = text::parse_real(f[1]);
    const auto err = text::parse_real(f[2]);
    if (!id || !start || !err) throw fail();
    r.window_id = *id;
    r.window_start = *start;
    r.error = *err;
    if (f[3] == "Anomaly") r.predicted = detect::Prediction::Anomaly;
    else if (f[3] == "Normal") r.predicted = detect::Prediction::Normal;
    else throw fail();
    if (f[4] == "Attack") r.window_label = features::WindowLabel::Attack;
    else if (f[4] == "Normal") r.window_label = features::WindowLabel::Normal;
    else throw fail();
    rows.push_back(r);
  }
  return rows;
}

void cmd_explain(const RunConfig& c) {
  const Layout layout{c.output_dir};
  const auto bundle = load_bundle(layout.bundle());
  const auto split = load_split(layout);
  const auto threshold = threshold_for(bundle, c);
  const auto bounds = explain::training_bounds(bundle.scaler);
  const auto& names = bundle.schema.names();

  const auto baseline_rows = features::read_feature_csv(layout.feature_csv(baseline_capture(c).name), bundle.schema);
  const Eigen::MatrixXd baseline_raw = preprocess::stack(select_ids(baseline_rows, split.train));

  std::vector<std::size_t> all_features(names.size());
  for (std::size_t i = 0; i < all_features.size(); ++i) all_features[i] = i;

  std::vector<std::pair<fs::path, std::string>> outputs;
  for (const auto& cap : c.captures) {
    if (cap.role != CaptureRole::Attack) continue;
    const auto rows = features::read_feature_csv(layout.feature_csv(cap.name), bundle.schema);
    std::vector<std::int64_t> anomaly_ids;
    for (const auto& d : read_detection_csv(layout.detect_csv(cap.name)))
      if (d.predicted == detect::Prediction::Anomaly) anomaly_ids.push_back(d.window_id);
    const std::size_t n_anomalies = anomaly_ids.size();
    if (c.max_explanations > 0 && anomaly_ids.size() > c.max_explanations) anomaly_ids.resize(c.max_explanations);

    const auto anomalies = select_ids(rows, anomaly_ids);
    const Eigen::MatrixXd scaled = preprocess::transform(preprocess::stack(anomalies), bundle.scaler);
    const auto explanations =
        explain::explain_batch(bundle.model, scaled, anomaly_ids, threshold, bounds, c.solver, c.jobs);

    std::size_t converged = 0;
    json samples = json::array();
    Eigen::MatrixXd cf_raw(static_cast<Eigen::Index>(names.size()), 0);
    std::vector<Eigen::VectorXd> cf_cols;
    for (const auto& e : explanations) {
      samples.push_back(explain::to_json(e, bundle.scaler));
      if (e.converged) {
        ++converged;
        cf_cols.push_back(preprocess::inverse_transform(e.x_cf, bundle.scaler));
      }
    }
    cf_raw.resize(static_cast<Eigen::Index>(names.size()), static_cast<Eigen::Index>(cf_cols.size()));
    for (std::size_t i = 0; i < cf_cols.size(); ++i) cf_raw.col(static_cast<Eigen::Index>(i)) = cf_cols[i];

    json report = {{"capture", cap.name},
                   {"class_tag", cap.class_tag},
                   {"threshold", threshold_json(threshold)},
                   {"anomalies", n_anomalies},
                   {"explained", explanations.size()},
                   {"converged", converged},
                   {"non_converged", explanations.size() - converged}};
    if (converged > 0) {
      report["global"] = explain::to_json(explain::aggregate(explanations, cap.class_tag), names);
    } else {
      report["global"] = nullptr;
      spdlog::warn("explain: {} has no converged explanations", cap.name);
    }

    const Eigen::MatrixXd attack_raw = preprocess::stack(anomalies);
    json hist = json::array();
    if (attack_raw.cols() > 0 && baseline_raw.cols() > 0 && cf_raw.cols() > 0) {
      for (const auto& h :
           explain::distribution_report(baseline_raw, attack_raw, cf_raw, all_features, c.histogram_bins))
        hist.push_back(explain::to_json(h, names));
    }
    report["histograms"] = std::move(hist);
    report["samples"] = std::move(samples);
    outputs.emplace_back(layout.explain() / (cap.name + ".json"), report.dump(1) + "\n");
    spdlog::info("explain: {} -> {} explained, {} converged", cap.name, explanations.size(), converged);
  }
  ensure_dir(layout.explain());
  for (const auto& [path, body] : outputs) write_text(path, body);
}

void cmd_eval(const RunConfig& c) {
  const Layout layout{c.output_dir};
  std::vector<eval::DatasetMetrics> table;
  json metrics = json::object();
  for (const auto& cap : c.captures) {
    const auto rows = read_detection_csv(layout.detect_csv(cap.name));
    std::vector<detect::Prediction> predicted;
    std::vector<features::WindowLabel> labels;
    for (const auto& r : rows) {
      predicted.push_back(r.predicted);
      labels.push_back(r.window_label);
    }
    const auto m = eval::confusion(predicted, labels);
    json entry = eval::to_json(m);
    entry["class_tag"] = cap.class_tag;
    entry["role"] = cap.role == CaptureRole::Baseline ? "baseline" : "attack";
    metrics[cap.name] = std::move(entry);
    table.push_back({cap.class_tag.empty() ? cap.name : cap.class_tag, m});
  }
  const auto summary = read_json(layout.detect() / "summary.json");
  json out = {{"threshold", summary.value("threshold", json::object())}, {"captures", metrics}};
  write_text(layout.eval() / "metrics.json", out.dump(2) + "\n");
  write_text(layout.eval() / "table.txt", eval::summarize(table));
}

void cmd_report(const RunConfig& c) {
  const Layout layout{c.output_dir};
  const auto metrics = read_json(layout.eval() / "metrics.json");
  std::string md = "# RX-ADS run report\n\n";
  if (metrics.contains("threshold")) {
    const auto& t = metrics.at("threshold");
    md += fmt::format("Threshold th = {}, scale = {}, effective = {} (quantile {})\n\n",
                      text::format_real(t.value("th", 0.0)), text::format_real(t.value("scale", 1.0)),
                      text::format_real(t.value("effective", 0.0)), text::format_real(t.value("quantile", 0.0)));
  }
  md += "## Detection\n\n```\n" + read_text(layout.eval() / "table.txt") + "```\n\n";
  for (const auto& [name, m] : metrics.at("captures").items()) {
    if (m.value("role", "") == "baseline")
      md += fmt::format("Normal behaviour ({}): {:.2f}% of held-out baseline windows predicted Normal\n\n", name,
                        100.0 * m.value("specificity", 0.0));
  }

  for (const auto& cap : c.captures) {
    const fs::path p = layout.explain() / (cap.name + ".json");
    if (cap.role != CaptureRole::Attack || !fs::exists(p)) continue;
    const auto ex = read_json(p);
    md += fmt::format("## Explanation: {} ({})\n\n", cap.class_tag, cap.name);
    md += fmt::format("{} anomalies, {} explained, {} converged, {} excluded\n\n", ex.value("anomalies", 0),
                      ex.value("explained", 0), ex.value("converged", 0), ex.value("non_converged", 0));
    if (!ex.contains("global") || ex.at("global").is_null()) continue;
    std::vector<std::pair<std::string, double>> devs;
    for (const auto& [feature, value] : ex.at("global").at("mean_deviation").items())
      devs.emplace_back(feature, value.get<double>());
    std::stable_sort(devs.begin(), devs.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
    md += "| Feature | Mean deviation | Reading |\n|---|---|---|\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(10, devs.size()); ++i) {
      if (devs[i].second == 0.0) break;
      md += fmt::format("| {} | {:+.4f} | {} |\n", devs[i].first, devs[i].second, devs[i].second > 0 ? "High" : "Low");
    }
    md += "\n";
  }
  write_text(layout.root / "report.md", md);
  fmt::print("{}", md);
}

int run_command(std::string_view command, const RunConfig& config) {
  static const std::vector<std::string_view> stages{"synth", "features", "train", "detect", "explain", "eval", "report"};
  const fs::path marker = config.output_dir / (std::string(command) + ".FAILED");
  bool validated = false;
  try {
    validate_for(command, config);
    validated = true;
    if (command == "synth") cmd_synth(config);
    else if (command == "features") cmd_features(config);
    else if (command == "train") cmd_train(config);
    else if (command == "detect") cmd_detect(config);
    else if (command == "explain") cmd_explain(config);
    else if (command == "eval") cmd_eval(config);
    else if (command == "report") cmd_report(config);
    else if (command == "run") {
      for (auto stage : stages) {
        if (stage != "synth") validate_for(stage, config);
        if (stage == "synth") cmd_synth(config);
        else if (stage == "features") cmd_features(config);
        else if (stage == "train") cmd_train(config);
        else if (stage == "detect") cmd_detect(config);
        else if (stage == "explain") cmd_explain(config);
        else if (stage == "eval") cmd_eval(config);
        else cmd_report(config);
      }
    }
    std::error_code ec;
    fs::remove(marker, ec);
    return kExitOk;
  } catch (const std::exception& e) {
    int code = kExitData;
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
      switch (err->error_class()) {
        case ErrorClass::Config: code = kExitConfig; break;
        case ErrorClass::Data: code = kExitData; break;
        case ErrorClass::Numeric: code = kExitNumeric; break;
      }
    }
    spdlog::error("{}: {}", command, e.what());
    // A failure during validation has written nothing; otherwise mark the
    // output directory as partial.
    if (validated || fs::exists(config.output_dir)) {
      std::error_code ec;
      fs::create_directories(config.output_dir, ec);
      std::ofstream(marker) << e.what() << "\n";
    }
    return code;
  }
}

}  // namespace rxads::cli
