// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rxads/rae.hpp"

namespace rxads::detect {

inline constexpr double kDefaultQuantile = 0.999999;

/// Reconstruction-error bound. Windows with error >= th * scale are anomalies.
struct Threshold {
  double th = 0.0;
  double quantile = kDefaultQuantile;
  double scale = 1.0;

  double effective() const { return th * scale; }
  bool operator==(const Threshold&) const = default;
};

enum class Prediction { Normal = 0, Anomaly = 1 };
std::string_view to_string(Prediction p);

struct DetectionResult {
  std::int64_t window_id = 0;
  double error = 0.0;
  Prediction predicted = Prediction::Normal;
};

/// Empirical quantile of the training errors. The order statistic sits at
/// rank (N+1)q (1-based), linearly interpolated and clamped to [min, max];
/// for N + 1 <= 1/(1-q) this is the largest training error.
Threshold calibrate(std::span<const double> train_errors, double quantile = kDefaultQuantile);

Prediction classify(double error, const Threshold& threshold);

/// Scores the columns of `scaled` (already transformed with the bundled
/// scaler). `window_ids` labels the columns.
std::vector<DetectionResult> score(const rae::RaeModel& model, const Eigen::MatrixXd& scaled,
                                   std::span<const std::int64_t> window_ids, const Threshold& threshold,
                                   unsigned jobs = 1);

}  // namespace rxads::detect
