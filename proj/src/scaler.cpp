// SPDX-License-Identifier: Apache-2.0
#include "rxads/scaler.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rxads/error.hpp"
#include "rxads/random.hpp"

namespace rxads::preprocess {

Eigen::MatrixXd stack(std::span<const features::FeatureVector> rows) {
  if (rows.empty()) return {};
  const auto d = static_cast<Eigen::Index>(rows.front().values.size());
  Eigen::MatrixXd m(d, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (static_cast<Eigen::Index>(rows[j].values.size()) != d) throw LengthMismatch("stack: ragged feature rows");
    m.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(rows[j].values.data(), d);
  }
  return m;
}

ScalerParams fit_scaler(const Eigen::MatrixXd& train) {
  if (train.cols() == 0 || train.rows() == 0) throw EmptyInput("fit_scaler: no training vectors");
  ScalerParams p;
  p.min = train.rowwise().minCoeff();
  p.max = train.rowwise().maxCoeff();
  p.degenerate.resize(static_cast<std::size_t>(train.rows()));
  for (Eigen::Index i = 0; i < train.rows(); ++i) p.degenerate[static_cast<std::size_t>(i)] = p.max[i] == p.min[i];
  return p;
}

namespace {

Eigen::VectorXd spans(const ScalerParams& p) {
  Eigen::VectorXd s = p.max - p.min;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (p.degenerate[static_cast<std::size_t>(i)]) s[i] = 1.0;
  return s;
}

}  // namespace

Eigen::VectorXd transform(const Eigen::VectorXd& v, const ScalerParams& params) {
  if (v.size() != params.size())
    throw LengthMismatch(fmt::format("transform: vector has {} features, scaler {}", v.size(), params.size()));
  return (v - params.min).cwiseQuotient(spans(params));
}

Eigen::MatrixXd transform(const Eigen::MatrixXd& samples, const ScalerParams& params) {
  if (samples.rows() != params.size())
    throw LengthMismatch(fmt::format("transform: samples have {} features, scaler {}", samples.rows(), params.size()));
  const Eigen::VectorXd s = spans(params);
  return (samples.colwise() - params.min).array().colwise() / s.array();
}

Eigen::VectorXd inverse_transform(const Eigen::VectorXd& s, const ScalerParams& params) {
  if (s.size() != params.size()) throw LengthMismatch("inverse_transform: length mismatch");
  return s.cwiseProduct(spans(params)) + params.min;
}

Split split(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace rxads::preprocess
