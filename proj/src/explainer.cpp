// SPDX-License-Identifier: Apache-2.0
#include "rxads/explainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>

#include "rxads/error.hpp"
#include "rxads/parallel.hpp"

namespace rxads::explain {

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

struct StageOutcome {
  Eigen::VectorXd z;
  double error = 0.0;
  int iterations = 0;
  bool stationary = false;
};

// One penalty stage: Adam on ||x - z||^2 + lambda * max(0, J(z) - tau)^2,
// projecting onto the box after each step.
StageOutcome run_stage(const rae::RaeModel& model, const Eigen::VectorXd& x, Eigen::VectorXd z, double tau,
                       double lambda, const BoundsBox& bounds, const SolverConfig& cfg) {
  const Eigen::Index d = x.size();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd grad_j;
  StageOutcome out;
  for (int t = 1; t <= cfg.max_iterations; ++t) {
    const double j = rae::error_and_input_gradient(model, z, grad_j);
    const double excess = std::max(0.0, j - tau);
    const Eigen::VectorXd grad = 2.0 * (z - x) + (2.0 * lambda * excess) * grad_j;
    if (!grad.allFinite()) throw NonFiniteIterate("counterfactual: non-finite gradient");

    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const Eigen::VectorXd step =
        cfg.learning_rate * ((m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon)).matrix();
    Eigen::VectorXd next = bounds.project(z - step);
    if (!next.allFinite()) throw NonFiniteIterate("counterfactual: non-finite iterate");

    const double moved = (next - z).norm();
    z = std::move(next);
    out.iterations = t;
    if (moved < cfg.step_tolerance) {
      out.stationary = true;
      break;
    }
  }
  out.error = rae::sample_error(model, z);
  if (!std::isfinite(out.error)) throw NonFiniteIterate("counterfactual: non-finite error");
  out.z = std::move(z);
  return out;
}

// Slide a feasible z back toward x along the segment from the box projection
// of x. Distance to x is convex along that segment and no larger than at z, so
// the last feasible point found is never farther from x than z was.
Eigen::VectorXd pull_toward(const rae::RaeModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                            double limit, const BoundsBox& bounds) {
  const Eigen::VectorXd start = bounds.project(x);
  if (rae::sample_error(model, start) < limit) return start;
  double lo = 0.0, hi = 1.0;
  for (int k = 0; k < 60; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (rae::sample_error(model, start + mid * (z - start)) < limit)
      hi = mid;
    else
      lo = mid;
  }
  const Eigen::VectorXd out = start + hi * (z - start);
  return rae::sample_error(model, out) < limit && bounds.contains(out) ? out : z;
}

void validate(const SolverConfig& c) {
  if (!(c.margin >= 0.0 && c.margin < 1.0)) throw ConfigError("solver: margin must be in [0, 1)");
  if (!(c.learning_rate > 0.0)) throw ConfigError("solver: learning_rate must be > 0");
  if (!(c.lambda_initial > 0.0) || !(c.lambda_growth > 1.0) || c.lambda_max < c.lambda_initial)
    throw ConfigError("solver: need lambda_initial > 0, lambda_growth > 1, lambda_max >= lambda_initial");
  if (c.max_iterations < 1) throw ConfigError("solver: max_iterations must be >= 1");
  if (!(c.step_tolerance > 0.0)) throw ConfigError("solver: step_tolerance must be > 0");
}

}  // namespace

std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::AlreadyNormal: return "AlreadyNormal";
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::Fallback: return "Fallback";
    case SolveStatus::MaxLambdaExceeded: return "MaxLambdaExceeded";
    case SolveStatus::NonFiniteIterate: return "NonFiniteIterate";
  }
  return "?";
}

BoundsBox training_bounds(const preprocess::ScalerParams& scaler) {
  BoundsBox b{Eigen::VectorXd::Zero(scaler.size()), Eigen::VectorXd::Ones(scaler.size())};
  for (Eigen::Index i = 0; i < scaler.size(); ++i)
    if (scaler.degenerate[static_cast<std::size_t>(i)]) b.upper[i] = 0.0;
  return b;
}

Explanation solve_counterfactual(const rae::RaeModel& model, const Eigen::VectorXd& x,
                                 const detect::Threshold& threshold, const BoundsBox& bounds,
                                 const SolverConfig& config, std::int64_t window_id) {
  validate(config);
  if (x.size() != model.input_dim() || bounds.lower.size() != x.size() || bounds.upper.size() != x.size())
    throw LengthMismatch("counterfactual: sample, model and bounds must share one length");

  // Strict, so the detector (J >= limit is an anomaly) scores every answer Normal.
  const double limit = threshold.effective();
  const double tau = limit * (1.0 - config.margin);

  Explanation e;
  e.window_id = window_id;
  e.x = x;

  auto finish = [&](Eigen::VectorXd z, double err, SolveStatus status) {
    e.x_cf = std::move(z);
    e.error_cf = err;
    e.deviation = e.x - e.x_cf;
    e.status = status;
    e.converged = status == SolveStatus::AlreadyNormal || status == SolveStatus::Converged ||
                  status == SolveStatus::Fallback;
    return e;
  };

  try {
    e.error = rae::sample_error(model, x);
    if (!std::isfinite(e.error)) throw NonFiniteIterate("counterfactual: non-finite error at the sample");
    if (e.error < limit && bounds.contains(x)) return finish(x, e.error, SolveStatus::AlreadyNormal);

    const Eigen::VectorXd fallback = bounds.project(rae::forward(model, x).reconstruction);
    const double fallback_error = rae::sample_error(model, fallback);
    const bool fallback_feasible = fallback_error < limit;

    std::vector<Eigen::VectorXd> starts{fallback};
    if (config.restart_from_input) starts.push_back(bounds.project(x));

    std::optional<StageOutcome> solution;
    std::optional<StageOutcome> least_infeasible;
    for (const auto& start : starts) {
      Eigen::VectorXd z = start;
      for (double lambda = config.lambda_initial; lambda <= config.lambda_max; lambda *= config.lambda_growth) {
        StageOutcome stage = run_stage(model, x, std::move(z), tau, lambda, bounds, config);
        e.iterations += stage.iterations;
        e.lambda_final = lambda;
        if (stage.stationary && stage.error < limit) {
          solution = std::move(stage);
          break;
        }
        if (!least_infeasible || stage.error < least_infeasible->error) least_infeasible = stage;
        z = stage.z;
      }
      if (solution) break;
    }

    std::optional<Eigen::VectorXd> refined_fallback;
    if (fallback_feasible) refined_fallback = pull_toward(model, x, fallback, limit, bounds);
    if (solution) {
      Eigen::VectorXd z = pull_toward(model, x, solution->z, limit, bounds);
      if (!refined_fallback || (x - z).norm() <= (x - *refined_fallback).norm()) {
        const double err = rae::sample_error(model, z);
        return finish(std::move(z), err, SolveStatus::Converged);
      }
    }
    if (refined_fallback) {
      const double err = rae::sample_error(model, *refined_fallback);
      return finish(*refined_fallback, err, SolveStatus::Fallback);
    }
    return finish(least_infeasible->z, least_infeasible->error, SolveStatus::MaxLambdaExceeded);
  } catch (const NonFiniteIterate&) {
    return finish(x, std::numeric_limits<double>::quiet_NaN(), SolveStatus::NonFiniteIterate);
  }
}

std::vector<Explanation> explain_batch(const rae::RaeModel& model, const Eigen::MatrixXd& anomalies,
                                       std::span<const std::int64_t> window_ids, const detect::Threshold& threshold,
                                       const BoundsBox& bounds, const SolverConfig& config, unsigned jobs) {
  if (static_cast<Eigen::Index>(window_ids.size()) != anomalies.cols())
    throw LengthMismatch("explain_batch: window id count differs from sample count");
  std::vector<Explanation> out(window_ids.size());
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    out[i] = solve_counterfactual(model, anomalies.col(static_cast<Eigen::Index>(i)), threshold, bounds, config,
                                  window_ids[i]);
  });
  return out;
}

GlobalExplanation aggregate(std::span<const Explanation> explanations, std::string class_tag) {
  GlobalExplanation g;
  g.class_tag = std::move(class_tag);
  for (const auto& e : explanations) {
    if (!e.converged) {
      ++g.excluded;
      continue;
    }
    if (g.count == 0) {
      g.mean_deviation = Eigen::VectorXd::Zero(e.deviation.size());
      g.mean_abs_deviation = Eigen::VectorXd::Zero(e.deviation.size());
    } else if (e.deviation.size() != g.mean_deviation.size()) {
      throw LengthMismatch("aggregate: explanations have different lengths");
    }
    g.mean_deviation += e.deviation;
    g.mean_abs_deviation += e.deviation.cwiseAbs();
    ++g.count;
  }
  if (g.count == 0)
    throw NoConvergedSamples(fmt::format("aggregate: no converged explanations for '{}'", g.class_tag));
  g.mean_deviation /= static_cast<double>(g.count);
  g.mean_abs_deviation /= static_cast<double>(g.count);
  return g;
}

std::vector<FeatureHistogram> distribution_report(const Eigen::MatrixXd& baseline, const Eigen::MatrixXd& attack,
                                                  const Eigen::MatrixXd& counterfactual,
                                                  std::span<const std::size_t> features, int bins) {
  if (baseline.cols() == 0 || attack.cols() == 0 || counterfactual.cols() == 0)
    throw EmptyInput("distribution_report: every population needs at least one sample");
  if (baseline.rows() != attack.rows() || baseline.rows() != counterfactual.rows())
    throw LengthMismatch("distribution_report: populations have different feature counts");
  if (bins < 1) throw ConfigError("distribution_report: bins must be >= 1");

  std::vector<FeatureHistogram> out;
  for (std::size_t f : features) {
    if (static_cast<Eigen::Index>(f) >= baseline.rows()) throw LengthMismatch("distribution_report: bad feature");
    const auto row = static_cast<Eigen::Index>(f);
    FeatureHistogram h;
    h.feature = f;
    h.lo = std::min({baseline.row(row).minCoeff(), attack.row(row).minCoeff(), counterfactual.row(row).minCoeff()});
    h.hi = std::max({baseline.row(row).maxCoeff(), attack.row(row).maxCoeff(), counterfactual.row(row).maxCoeff()});
    const double width = (h.hi - h.lo) / bins;
    auto fill = [&](const Eigen::MatrixXd& pop) {
      std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
      for (Eigen::Index j = 0; j < pop.cols(); ++j) {
        int b = width > 0.0 ? static_cast<int>(std::floor((pop(row, j) - h.lo) / width)) : 0;
        ++counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
      }
      return counts;
    };
    h.baseline = fill(baseline);
    h.attack = fill(attack);
    h.counterfactual = fill(counterfactual);
    out.push_back(std::move(h));
  }
  return out;
}

nlohmann::json to_json(const Explanation& e, const preprocess::ScalerParams& scaler) {
  nlohmann::json j{
      {"window_id", e.window_id},
      {"J", e.error},
      {"converged", e.converged},
      {"status", std::string(to_string(e.status))},
      {"iterations", e.iterations},
      {"lambda_final", e.lambda_final},
      {"x", to_std(e.x)},
      {"x_cf", to_std(e.x_cf)},
      {"deviation", to_std(e.deviation)},
  };
  // NaN is not representable in JSON
  j["J_cf"] = std::isfinite(e.error_cf) ? nlohmann::json(e.error_cf) : nlohmann::json(nullptr);
  if (e.x.size() == scaler.size()) {
    j["deviation_unscaled"] =
        to_std(preprocess::inverse_transform(e.x, scaler) - preprocess::inverse_transform(e.x_cf, scaler));
  }
  return j;
}

nlohmann::json to_json(const GlobalExplanation& g, const std::vector<std::string>& names) {
  nlohmann::json mean = nlohmann::json::object();
  nlohmann::json mean_abs = nlohmann::json::object();
  for (Eigen::Index i = 0; i < g.mean_deviation.size(); ++i) {
    const std::string name = static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)]
                                                                         : fmt::format("f{}", i);
    mean[name] = g.mean_deviation[i];
    mean_abs[name] = g.mean_abs_deviation[i];
  }
  return {{"class_tag", g.class_tag},
          {"count", g.count},
          {"excluded", g.excluded},
          {"mean_deviation", mean},
          {"mean_abs_deviation", mean_abs}};
}

nlohmann::json to_json(const FeatureHistogram& h, const std::vector<std::string>& names) {
  return {{"feature", h.feature < names.size() ? names[h.feature] : fmt::format("f{}", h.feature)},
          {"lo", h.lo},
          {"hi", h.hi},
          {"bins", h.baseline.size()},
          {"baseline", h.baseline},
          {"attack", h.attack},
          {"counterfactual", h.counterfactual}};
}

}  // namespace rxads::explain
