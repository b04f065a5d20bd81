// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rxads/detector.hpp"
#include "rxads/rae.hpp"
#include "rxads/scaler.hpp"

namespace rxads::explain {

/// Elementwise box in scaled space.
struct BoundsBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::VectorXd project(const Eigen::VectorXd& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
  bool contains(const Eigen::VectorXd& v) const {
    return (v.array() >= lower.array()).all() && (v.array() <= upper.array()).all();
  }
};

/// The scaled training range: [0, 1] per feature, {0} for degenerate ones.
BoundsBox training_bounds(const preprocess::ScalerParams& scaler);

struct SolverConfig {
  double margin = 0.01;  // penalty target sits at (1 - margin) * th * scale
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lambda_initial = 1.0;
  double lambda_growth = 10.0;
  double lambda_max = 1e6;
  int max_iterations = 5000;  // per lambda stage
  double step_tolerance = 1e-6;
  bool restart_from_input = true;
};

enum class SolveStatus {
  AlreadyNormal,      // x itself is feasible; nothing to change
  Converged,          // stationary penalty solution inside the feasible set
  Fallback,           // the box-projected reconstruction was closer and feasible
  MaxLambdaExceeded,  // no feasible stationary point found
  NonFiniteIterate,
};
std::string_view to_string(SolveStatus s);

struct Explanation {
  std::int64_t window_id = 0;
  Eigen::VectorXd x;          // scaled anomalous sample
  Eigen::VectorXd x_cf;       // counterfactual
  Eigen::VectorXd deviation;  // x - x_cf
  double error = 0.0;         // J(x)
  double error_cf = 0.0;      // J(x_cf)
  int iterations = 0;
  bool converged = false;
  double lambda_final = 0.0;
  SolveStatus status = SolveStatus::MaxLambdaExceeded;
};

/// Smallest change to `x` that the detector accepts as normal:
///   min ||x - z||^2  s.t.  J(z) <= th * scale,  lower <= z <= upper
/// solved with a quadratic exterior penalty, Adam steps on z and projection
/// onto the box after every step. The penalty weight grows geometrically
/// while stationary points stay infeasible. The box-projected reconstruction
/// of x is both the first starting point and a fallback answer, so the
/// result is never farther from x than that candidate when it is feasible.
Explanation solve_counterfactual(const rae::RaeModel& model, const Eigen::VectorXd& x,
                                 const detect::Threshold& threshold, const BoundsBox& bounds,
                                 const SolverConfig& config = {}, std::int64_t window_id = 0);

/// Independent solves per column, order preserved.
std::vector<Explanation> explain_batch(const rae::RaeModel& model, const Eigen::MatrixXd& anomalies,
                                       std::span<const std::int64_t> window_ids, const detect::Threshold& threshold,
                                       const BoundsBox& bounds, const SolverConfig& config = {}, unsigned jobs = 1);

struct GlobalExplanation {
  std::string class_tag;
  Eigen::VectorXd mean_deviation;
  Eigen::VectorXd mean_abs_deviation;
  std::size_t count = 0;     // converged samples aggregated
  std::size_t excluded = 0;  // non-converged samples skipped
};

/// Means over converged explanations only; throws NoConvergedSamples.
GlobalExplanation aggregate(std::span<const Explanation> explanations, std::string class_tag);

struct FeatureHistogram {
  std::size_t feature = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> baseline;
  std::vector<std::size_t> attack;
  std::vector<std::size_t> counterfactual;
};

/// Fixed-width histograms over the pooled range of the three populations
/// (samples are matrix columns). The top bin is closed on the right.
std::vector<FeatureHistogram> distribution_report(const Eigen::MatrixXd& baseline, const Eigen::MatrixXd& attack,
                                                  const Eigen::MatrixXd& counterfactual,
                                                  std::span<const std::size_t> features, int bins = 50);

nlohmann::json to_json(const Explanation& e, const preprocess::ScalerParams& scaler);
nlohmann::json to_json(const GlobalExplanation& g, const std::vector<std::string>& names);
nlohmann::json to_json(const FeatureHistogram& h, const std::vector<std::string>& names);

}  // namespace rxads::explain
