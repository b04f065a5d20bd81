// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL/SKIP line per criterion, non-zero exit on
// any FAIL. Optional real-capture checks run when RXADS_HCRL_DIR points at a
// directory holding the public OTIDS / Car Hacking files.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "feature_oracle.hpp"
#include "gradcheck.hpp"
#include "rxads/detector.hpp"
#include "rxads/explainer.hpp"
#include "rxads/features.hpp"
#include "rxads/metrics.hpp"
#include "rxads/rae.hpp"
#include "rxads/scaler.hpp"
#include "rxads/synth.hpp"
#include "toy_oracle.hpp"

using namespace rxads;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Verdict::Fail, fmt::format("exception: {}", e.what())};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
  if (o.verdict == Verdict::Fail) ++failures;
  fmt::print("{} {}: {} [{:.1f}s]\n", tag, name, o.detail, secs);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome feature_oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = can::synth_baseline(1.0, 101);
  auto mixed = can::inject_fuzzy(can::inject_dos(base, 600, 102), 400, {}, 103);
  mixed.resize(1000);
  const auto schema = features::fit_schema(base, true);
  const std::set<std::uint32_t> ids(schema.baseline_ids().begin(), schema.baseline_ids().end());

  std::size_t windows = 0, mismatches = 0;
  for (double win : {0.005, 0.01, 0.02, 0.03, 0.05}) {
    const auto got = features::extract_features(mixed, {win, std::nullopt}, schema);
    const auto want = oracle::oracle_windows(mixed, win, ids, true);
    if (got.size() != want.size()) return {Verdict::Fail, fmt::format("window count differs at win={}", win)};
    for (std::size_t k = 0; k < got.size(); ++k) {
      ++windows;
      bool same = got[k].window_start == want[k].start &&
                  got[k].contains_frames == static_cast<std::int64_t>(want[k].members.size()) &&
                  (got[k].window_label == features::WindowLabel::Attack) == want[k].attack;
      for (std::size_t c = 0; c < schema.size(); ++c) same = same && got[k].values[c] == want[k].values.at(schema.names()[c]);
      if (!same) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = mismatches == 0 && secs < 10.0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("1000 frames, 5 window sizes, {} windows, {} mismatches, {:.2f}s (limit 10s)", windows,
                      mismatches, secs)};
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst_param = 0.0, worst_input = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto model = oracle::random_model(rng);
    const auto batch = oracle::random_batch(rng, model.input_dim(), 1 + static_cast<int>(rng.below(8)));
    const auto r = oracle::check_gradients(model, batch);
    worst_param = std::max(worst_param, r.param_rel);
    worst_input = std::max(worst_input, r.input_rel);
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_param < 1e-5 && worst_input < 1e-5 && secs < 60.0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("100 draws, worst relative error: params {:.2e}, input {:.2e} (limit 1e-5), {:.2f}s", worst_param,
                      worst_input, secs)};
}

Outcome closed_form_oracle() {
  Rng rng(77);
  double worst = 0.0;
  int unconverged = 0;
  for (int i = 0; i < 200; ++i) {
    const int d = 2 + static_cast<int>(rng.below(10));
    const auto toy = oracle::frozen_toy(rng, d);
    const double th = 0.01;
    const Eigen::VectorXd x = oracle::toy_anomaly(rng, toy.center, th);
    const explain::BoundsBox box{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)};
    const auto e = explain::solve_counterfactual(toy.model, x, {th, 0.999999, 1.0}, box);
    if (!e.converged) ++unconverged;
    worst = std::max(worst, (e.x_cf - oracle::radial_projection(x, toy.center, th)).norm());
  }
  const bool ok = worst <= 1e-3 && unconverged == 0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("200 anomalies, max distance to analytic projection {:.2e} (limit 1e-3), {} unconverged", worst,
                      unconverged)};
}

// ---------------------------------------------------------------------------
// Synthetic end-to-end fixture shared by the remaining criteria.

struct Fixture {
  features::FeatureSchema schema{{}, false, {}};
  preprocess::ScalerParams scaler;
  rae::RaeModel model;
  detect::Threshold threshold;
  Eigen::MatrixXd train, test, dos, fuzzy;  // scaled
  std::vector<features::WindowLabel> dos_labels, fuzzy_labels;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

constexpr std::size_t kTrainWindows = 2000;
constexpr std::size_t kTestWindows = 600;

Fixture build_fixture() {
  const auto t0 = std::chrono::steady_clock::now();
  Fixture f;
  const features::WindowSpec spec{0.05, std::nullopt};
  const can::SynthConfig bus;

  // 66 s of baseline gives a little over 2600 windows at 25 ms stride.
  const auto baseline = can::synth_baseline(66.0, 1, bus);
  f.schema = features::fit_schema(baseline, false);
  auto rows = features::extract_features(baseline, spec, f.schema);
  if (rows.size() < kTrainWindows + kTestWindows) throw std::runtime_error("baseline fixture too short");
  rows.resize(kTrainWindows + kTestWindows);

  const double ratio = static_cast<double>(kTrainWindows) / static_cast<double>(kTrainWindows + kTestWindows);
  const auto parts = preprocess::split(rows.size(), ratio, 2);
  std::vector<features::FeatureVector> train_rows, test_rows;
  for (auto i : parts.train) train_rows.push_back(rows[i]);
  for (auto i : parts.test) test_rows.push_back(rows[i]);

  const Eigen::MatrixXd raw_train = preprocess::stack(train_rows);
  f.scaler = preprocess::fit_scaler(raw_train);
  f.train = preprocess::transform(raw_train, f.scaler);
  f.test = preprocess::transform(preprocess::stack(test_rows), f.scaler);

  const int d = static_cast<int>(f.schema.size());
  rae::TrainConfig tc;
  tc.shuffle_seed = 4;
  const auto t_train = std::chrono::steady_clock::now();
  f.model = rae::fit(rae::init_model({d, 64, 32, 16, 32, 64, d}, 1e-5, 3), f.train, tc).model;
  f.train_seconds = seconds_since(t_train);
  const Eigen::VectorXd errors = rae::sample_errors(f.model, f.train);
  f.threshold = detect::calibrate(std::vector<double>(errors.data(), errors.data() + errors.size()));

  auto attack = [&](bool dos, std::uint64_t seed, Eigen::MatrixXd& out, std::vector<features::WindowLabel>& labels) {
    const auto bus_frames = can::synth_baseline(16.0, seed, bus);
    const auto frames = dos ? can::inject_dos(bus_frames, 4000.0, seed + 1)
                            : can::inject_fuzzy(bus_frames, 1000.0, {}, seed + 1);
    const auto attack_rows = features::extract_features(frames, spec, f.schema);
    out = preprocess::transform(preprocess::stack(attack_rows), f.scaler);
    for (const auto& r : attack_rows) labels.push_back(r.window_label);
  };
  attack(true, 10, f.dos, f.dos_labels);
  attack(false, 20, f.fuzzy, f.fuzzy_labels);
  f.total_seconds = seconds_since(t0);
  return f;
}

std::vector<detect::Prediction> predict(const Fixture& f, const Eigen::MatrixXd& scaled) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(scaled.cols()));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
  std::vector<detect::Prediction> out;
  for (const auto& r : detect::score(f.model, scaled, ids, f.threshold)) out.push_back(r.predicted);
  return out;
}

Outcome calibration_guarantee(const Fixture& f) {
  const Eigen::VectorXd errors = rae::sample_errors(f.model, f.train);
  std::size_t above = 0;
  for (double e : errors) above += e > f.threshold.th ? 1 : 0;
  const double q = f.threshold.quantile;
  const auto allowed = static_cast<std::size_t>(std::ceil((1.0 - q) * static_cast<double>(errors.size())));
  const bool ok = above <= allowed && above == 0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("{} training windows, {} above th={:.6g} (allowed {})", errors.size(), above, f.threshold.th,
                      allowed)};
}

Outcome end_to_end(const Fixture& f) {
  const auto test_pred = predict(f, f.test);
  const std::vector<features::WindowLabel> normal(test_pred.size(), features::WindowLabel::Normal);
  const auto specificity = eval::confusion(test_pred, normal).specificity;
  const auto dos = eval::confusion(predict(f, f.dos), f.dos_labels);
  const auto fuzzy = eval::confusion(predict(f, f.fuzzy), f.fuzzy_labels);
  const bool ok = f.train.cols() == static_cast<Eigen::Index>(kTrainWindows) &&
                  f.test.cols() == static_cast<Eigen::Index>(kTestWindows) && specificity >= 0.995 && dos.recall >= 0.99 &&
                  fuzzy.recall >= 0.98 && !dos.recall_degenerate && !fuzzy.recall_degenerate &&
                  f.total_seconds < 300.0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("train/test {}/{}, specificity {:.2f}% (>=99.5), DoS recall {:.2f}% (>=99) F1 {:.2f}%, "
                      "Fuzzy recall {:.2f}% (>=98) F1 {:.2f}%, fixture {:.1f}s incl. training {:.1f}s (limit 300s)",
                      f.train.cols(), f.test.cols(), 100 * specificity, 100 * dos.recall, 100 * dos.f1, 100 * fuzzy.recall,
                      100 * fuzzy.f1, f.total_seconds, f.train_seconds)};
}

struct ExplainRun {
  std::vector<explain::Explanation> dos, fuzzy;
};

std::vector<explain::Explanation> explain_anomalies(const Fixture& f, const Eigen::MatrixXd& scaled) {
  const auto pred = predict(f, scaled);
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == detect::Prediction::Anomaly) ids.push_back(static_cast<std::int64_t>(i));
  Eigen::MatrixXd xs(scaled.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) xs.col(static_cast<Eigen::Index>(j)) = scaled.col(ids[j]);
  return explain::explain_batch(f.model, xs, ids, f.threshold, explain::training_bounds(f.scaler));
}

Outcome feasibility(const Fixture& f, const ExplainRun& run) {
  const auto box = explain::training_bounds(f.scaler);
  std::size_t total = 0, converged = 0, infeasible = 0, still_flagged = 0, dominated = 0, candidates = 0;
  for (const auto* set : {&run.dos, &run.fuzzy}) {
    for (const auto& e : *set) {
      ++total;
      if (e.converged) {
        ++converged;
        const double j = rae::sample_error(f.model, e.x_cf);
        if (!(j <= f.threshold.effective()) || !box.contains(e.x_cf)) ++infeasible;
        if (detect::classify(j, f.threshold) != detect::Prediction::Normal) ++still_flagged;
      }
      const Eigen::VectorXd p = box.project(rae::forward(f.model, e.x).reconstruction);
      if (rae::sample_error(f.model, p) <= f.threshold.effective()) {
        ++candidates;
        if ((e.x - e.x_cf).norm() > (e.x - p).norm() + 1e-6) ++dominated;
      }
    }
  }
  const bool ok = converged > 0 && infeasible == 0 && still_flagged == 0 && dominated == 0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("{} explanations, {} converged, {} infeasible, {} still flagged by the detector; proximity "
                      "checked on {} feasible reconstructions, {} violations",
                      total, converged, infeasible, still_flagged, candidates, dominated)};
}

Outcome dos_sign_pattern(const Fixture& f, const ExplainRun& run) {
  const auto g = explain::aggregate(run.dos, "DoS");
  const auto hp = static_cast<Eigen::Index>(*f.schema.index_of("high_priority_count"));
  const auto ir = static_cast<Eigen::Index>(*f.schema.index_of("instant_reply_count"));
  const bool ok = g.mean_deviation[hp] > 0.0 && g.mean_deviation[ir] < 0.0;
  return {ok ? Verdict::Pass : Verdict::Fail,
          fmt::format("{} converged DoS explanations: mean deviation high_priority_count {:+.4g} (>0), "
                      "instant_reply_count {:+.4g} (<0)",
                      g.count, g.mean_deviation[hp], g.mean_deviation[ir])};
}

// ---------------------------------------------------------------------------
// Real captures, when available.

struct RealResult {
  double specificity = 0.0;
  eval::Metrics dos, fuzzy;
  double dos_flagged = 0.0, fuzzy_flagged = 0.0;
};

double flagged_fraction(const std::vector<detect::Prediction>& p) {
  std::size_t n = 0;
  for (auto v : p) n += v == detect::Prediction::Anomaly ? 1 : 0;
  return p.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(p.size());
}

RealResult run_real(const fs::path& baseline, can::CaptureFormat baseline_format, const fs::path& dos,
                    const fs::path& fuzzy, can::CaptureFormat attack_format, double win) {
  const features::WindowSpec spec{win, std::nullopt};
  const auto base = can::load_capture(baseline, baseline_format).frames;
  const auto schema = features::fit_schema(base, false);
  const auto rows = features::extract_features(base, spec, schema);
  const auto parts = preprocess::split(rows.size(), 0.7, 2);
  std::vector<features::FeatureVector> train_rows, test_rows;
  for (auto i : parts.train) train_rows.push_back(rows[i]);
  for (auto i : parts.test) test_rows.push_back(rows[i]);
  Fixture f{schema};
  f.scaler = preprocess::fit_scaler(preprocess::stack(train_rows));
  f.train = preprocess::transform(preprocess::stack(train_rows), f.scaler);
  const int d = static_cast<int>(schema.size());
  rae::TrainConfig tc;
  tc.shuffle_seed = 4;
  f.model = rae::fit(rae::init_model({d, 64, 32, 16, 32, 64, d}, 1e-5, 3), f.train, tc).model;
  const Eigen::VectorXd errors = rae::sample_errors(f.model, f.train);
  f.threshold = detect::calibrate(std::vector<double>(errors.data(), errors.data() + errors.size()));

  RealResult r;
  const auto test_pred = predict(f, preprocess::transform(preprocess::stack(test_rows), f.scaler));
  r.specificity = 1.0 - flagged_fraction(test_pred);
  auto score_capture = [&](const fs::path& p, eval::Metrics& m, double& flagged) {
    const auto attack_rows = features::extract_features(can::load_capture(p, attack_format).frames, spec, schema);
    std::vector<features::WindowLabel> labels;
    for (const auto& row : attack_rows) labels.push_back(row.window_label);
    const auto pred = predict(f, preprocess::transform(preprocess::stack(attack_rows), f.scaler));
    m = eval::confusion(pred, labels);
    flagged = flagged_fraction(pred);
  };
  score_capture(dos, r.dos, r.dos_flagged);
  score_capture(fuzzy, r.fuzzy, r.fuzzy_flagged);
  return r;
}

Outcome real_captures() {
  const char* dir_env = std::getenv("RXADS_HCRL_DIR");
  if (!dir_env || !*dir_env) return {Verdict::Skip, "set RXADS_HCRL_DIR to the directory holding the HCRL captures"};
  const fs::path dir(dir_env);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> lines;
  bool ok = true, any = false;

  const auto otids_base = dir / "Attack_free_dataset.txt";
  const auto otids_dos = dir / "DoS_attack_dataset.txt";
  const auto otids_fuzzy = dir / "Fuzzy_attack_dataset.txt";
  if (fs::exists(otids_base) && fs::exists(otids_dos) && fs::exists(otids_fuzzy)) {
    any = true;
    const auto r = run_real(otids_base, can::CaptureFormat::Otids, otids_dos, otids_fuzzy, can::CaptureFormat::Otids,
                            0.05);
    // These captures carry no per-frame labels: detection is the share of
    // windows flagged.
    const bool pass = r.specificity >= 0.995 && r.dos_flagged >= 0.995 && r.fuzzy_flagged >= 0.995;
    ok = ok && pass;
    lines.push_back(fmt::format("OTIDS normal {:.2f}% DoS {:.2f}% Fuzzy {:.2f}% (each 100 +- 0.5)",
                                100 * r.specificity, 100 * r.dos_flagged, 100 * r.fuzzy_flagged));
  }

  const auto ch_base = dir / "normal_run_data.txt";
  const auto ch_dos = dir / "DoS_dataset.csv";
  const auto ch_fuzzy = dir / "Fuzzy_dataset.csv";
  if (fs::exists(ch_base) && fs::exists(ch_dos) && fs::exists(ch_fuzzy)) {
    any = true;
    const auto r = run_real(ch_base, can::CaptureFormat::Otids, ch_dos, ch_fuzzy, can::CaptureFormat::CarHacking, 0.04);
    const bool pass = r.dos.f1 >= 0.98 && r.fuzzy.f1 >= 0.975;
    ok = ok && pass;
    lines.push_back(fmt::format("Car Hacking DoS F1 {:.2f}% (>=98.0) Fuzzy F1 {:.2f}% (>=97.5)", 100 * r.dos.f1,
                                100 * r.fuzzy.f1));
  }
  if (!any) return {Verdict::Skip, fmt::format("no recognised capture files in {}", dir.string())};
  const double secs = seconds_since(t0);
  ok = ok && secs < 1800.0;
  std::string detail;
  for (const auto& l : lines) detail += (detail.empty() ? "" : "; ") + l;
  return {ok ? Verdict::Pass : Verdict::Fail, fmt::format("{}; {:.0f}s (limit 1800s)", detail, secs)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);

  report("feature_oracle_equivalence", feature_oracle_equivalence);
  report("gradient_correctness", gradient_correctness);
  report("closed_form_counterfactual_oracle", closed_form_oracle);

  std::optional<Fixture> fixture;
  try {
    fixture = build_fixture();
  } catch (const std::exception& e) {
    fmt::print("fixture construction failed: {}\n", e.what());
  }
  auto with_fixture = [&](const std::string& name, const std::function<Outcome(const Fixture&)>& body) {
    report(name, [&]() -> Outcome {
      if (!fixture) return {Verdict::Fail, "synthetic fixture unavailable"};
      return body(*fixture);
    });
  };
  with_fixture("calibration_guarantee", calibration_guarantee);
  with_fixture("synthetic_end_to_end_detection", end_to_end);

  std::optional<ExplainRun> run;
  if (fixture) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      run = ExplainRun{explain_anomalies(*fixture, fixture->dos), explain_anomalies(*fixture, fixture->fuzzy)};
      fmt::print("explained {} DoS and {} Fuzzy anomalies in {:.1f}s\n", run->dos.size(), run->fuzzy.size(),
                 seconds_since(t0));
    } catch (const std::exception& e) {
      fmt::print("explanation run failed: {}\n", e.what());
    }
  }
  auto with_run = [&](const std::string& name, const std::function<Outcome(const Fixture&, const ExplainRun&)>& body) {
    report(name, [&]() -> Outcome {
      if (!fixture || !run) return {Verdict::Fail, "explanation run unavailable"};
      return body(*fixture, *run);
    });
  };
  with_run("counterfactual_feasibility", feasibility);
  with_run("dos_explanation_sign_pattern", dos_sign_pattern);

  report("optional_hcrl_reproduction", real_captures);

  fmt::print("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
