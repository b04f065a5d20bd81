// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rxads/features.hpp"

namespace rxads::preprocess {

/// Per-feature min/max fitted on baseline training windows.
struct ScalerParams {
  Eigen::VectorXd min;
  Eigen::VectorXd max;
  std::vector<bool> degenerate;  // max == min

  Eigen::Index size() const { return min.size(); }
  bool operator==(const ScalerParams&) const = default;
};

/// Samples are the columns of a d x N matrix.
Eigen::MatrixXd stack(std::span<const features::FeatureVector> rows);

ScalerParams fit_scaler(const Eigen::MatrixXd& train);

/// (v - min) / (max - min), unclipped. A degenerate feature is shifted by its
/// constant but not divided, so training values map to 0 while unseen
/// departures from the constant stay visible in raw units.
Eigen::VectorXd transform(const Eigen::VectorXd& v, const ScalerParams& params);
Eigen::MatrixXd transform(const Eigen::MatrixXd& samples, const ScalerParams& params);
Eigen::VectorXd inverse_transform(const Eigen::VectorXd& s, const ScalerParams& params);

struct Split {
  std::vector<std::size_t> train;  // ascending indices
  std::vector<std::size_t> test;
};

/// Seeded random partition of [0, n); |train| = round(ratio * n).
Split split(std::size_t n, double ratio, std::uint64_t seed);

}  // namespace rxads::preprocess
