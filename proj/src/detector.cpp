// SPDX-License-Identifier: Apache-2.0
#include "rxads/detector.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "rxads/error.hpp"
#include "rxads/parallel.hpp"

namespace rxads::detect {

std::string_view to_string(Prediction p) { return p == Prediction::Anomaly ? "Anomaly" : "Normal"; }

Threshold calibrate(std::span<const double> train_errors, double quantile) {
  if (train_errors.empty()) throw EmptyInput("calibrate: no training errors");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("calibrate: quantile must be in (0, 1]");
  std::vector<double> sorted(train_errors.begin(), train_errors.end());
  for (double e : sorted)
    if (!(e >= 0.0) || !std::isfinite(e)) throw EmptyInput("calibrate: errors must be finite and >= 0");
  std::sort(sorted.begin(), sorted.end());

  const double n = static_cast<double>(sorted.size());
  const double rank = std::clamp((n + 1.0) * quantile, 1.0, n);  // 1-based
  const auto lo = static_cast<std::size_t>(std::floor(rank)) - 1;
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - std::floor(rank);
  double th = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  // th must stay positive so an exact reconstruction (J = 0) is still Normal.
  if (th <= 0.0) th = std::numeric_limits<double>::min();
  return Threshold{th, quantile, 1.0};
}

Prediction classify(double error, const Threshold& threshold) {
  return error >= threshold.effective() ? Prediction::Anomaly : Prediction::Normal;
}

std::vector<DetectionResult> score(const rae::RaeModel& model, const Eigen::MatrixXd& scaled,
                                   std::span<const std::int64_t> window_ids, const Threshold& threshold,
                                   unsigned jobs) {
  if (static_cast<Eigen::Index>(window_ids.size()) != scaled.cols())
    throw LengthMismatch("score: window id count differs from sample count");
  std::vector<DetectionResult> out(window_ids.size());
  constexpr Eigen::Index kBlock = 256;
  const auto blocks = static_cast<std::size_t>((scaled.cols() + kBlock - 1) / kBlock);
  parallel_for(blocks, jobs, [&](std::size_t b) {
    const Eigen::Index begin = static_cast<Eigen::Index>(b) * kBlock;
    const Eigen::Index count = std::min(kBlock, scaled.cols() - begin);
    const Eigen::VectorXd errors = rae::sample_errors(model, scaled.middleCols(begin, count));
    for (Eigen::Index j = 0; j < count; ++j) {
      auto& r = out[static_cast<std::size_t>(begin + j)];
      r.window_id = window_ids[static_cast<std::size_t>(begin + j)];
      r.error = errors[j];
      r.predicted = classify(r.error, threshold);
    }
  });
  return out;
}

}  // namespace rxads::detect
