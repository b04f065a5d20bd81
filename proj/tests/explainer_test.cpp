// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "rxads/error.hpp"
#include "rxads/explainer.hpp"
#include "toy_oracle.hpp"

using namespace rxads;
using namespace rxads::explain;

namespace {

BoundsBox unit_box(int d) { return {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)}; }

// A small trained model on data near a line, with its threshold.
struct Trained {
  rae::RaeModel model;
  detect::Threshold threshold;
};

Trained trained_model() {
  Rng rng(12);
  Eigen::MatrixXd train(5, 300);
  for (Eigen::Index c = 0; c < train.cols(); ++c) {
    const double t = rng.uniform();
    for (Eigen::Index i = 0; i < 5; ++i) train(i, c) = 0.2 + 0.6 * (i % 2 ? t : 1.0 - t) + rng.uniform(-0.02, 0.02);
  }
  rae::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 1e-2;
  auto fit = rae::fit(rae::init_model({5, 6, 2, 6, 5}, 1e-5, 4), train, cfg);
  const Eigen::VectorXd errors = rae::sample_errors(fit.model, train);
  return {fit.model, detect::calibrate(std::vector<double>(errors.data(), errors.data() + errors.size()))};
}

}  // namespace

TEST(Bounds, TrainingBoxCollapsesDegenerateFeatures) {
  preprocess::ScalerParams p;
  p.min = Eigen::VectorXd::Zero(3);
  p.max = Eigen::VectorXd::Ones(3);
  p.degenerate = {false, true, false};
  const auto b = training_bounds(p);
  EXPECT_EQ(b.upper[1], 0.0);
  EXPECT_EQ(b.upper[0], 1.0);
  Eigen::VectorXd v(3);
  v << -1, 0.5, 2;
  EXPECT_EQ(b.project(v), Eigen::Vector3d(0, 0, 1));
}

TEST(Counterfactual, MatchesRadialProjectionOnFrozenToy) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(6));
    const auto toy = oracle::frozen_toy(rng, d);
    const double th = 0.01;
    const detect::Threshold t{th, 0.999999, 1.0};
    const Eigen::VectorXd x = oracle::toy_anomaly(rng, toy.center, th);
    const auto e = solve_counterfactual(toy.model, x, t, unit_box(d));
    ASSERT_TRUE(e.converged) << to_string(e.status);
    const Eigen::VectorXd want = oracle::radial_projection(x, toy.center, th);
    EXPECT_LT((e.x_cf - want).norm(), 1e-3) << "trial " << trial;
    EXPECT_LT(e.error_cf, th);  // the detector would still flag J == th
  }
}

TEST(Counterfactual, AlreadyNormalSampleIsUnchanged) {
  Rng rng(1);
  const auto toy = oracle::frozen_toy(rng, 3);
  const detect::Threshold t{0.01, 0.999999, 1.0};
  const auto e = solve_counterfactual(toy.model, toy.center, t, unit_box(3));
  EXPECT_EQ(e.status, SolveStatus::AlreadyNormal);
  EXPECT_TRUE(e.deviation.isZero());
}

TEST(Counterfactual, FeasibleAndNoWorseThanProjectedReconstruction) {
  const auto tm = trained_model();
  Rng rng(5);
  const auto box = unit_box(5);
  int solved = 0;
  for (int trial = 0; trial < 15; ++trial) {
    Eigen::VectorXd x(5);
    for (auto& v : x) v = rng.uniform(-0.5, 1.5);
    if (rae::sample_error(tm.model, x) < tm.threshold.effective()) continue;
    const auto e = solve_counterfactual(tm.model, x, tm.threshold, box);
    const Eigen::VectorXd p = box.project(rae::forward(tm.model, x).reconstruction);
    if (e.converged) {
      ++solved;
      EXPECT_LE(rae::sample_error(tm.model, e.x_cf), tm.threshold.effective());
      EXPECT_TRUE(box.contains(e.x_cf));
    }
    if (rae::sample_error(tm.model, p) <= tm.threshold.effective())
      EXPECT_LE((x - e.x_cf).norm(), (x - p).norm() + 1e-6);
  }
  EXPECT_GT(solved, 0);
}

TEST(Counterfactual, SolvingAgainFromTheAnswerIsAFixedPoint) {
  Rng rng(8);
  const auto toy = oracle::frozen_toy(rng, 4);
  const detect::Threshold t{0.01, 0.999999, 1.0};
  const auto first = solve_counterfactual(toy.model, oracle::toy_anomaly(rng, toy.center, 0.01), t, unit_box(4));
  ASSERT_TRUE(first.converged);
  const auto again = solve_counterfactual(toy.model, first.x_cf, t, unit_box(4));
  EXPECT_TRUE(again.deviation.isZero());
}

TEST(Counterfactual, ThresholdScaleWidensTheFeasibleSet) {
  Rng rng(9);
  const auto toy = oracle::frozen_toy(rng, 3);
  const Eigen::VectorXd x = oracle::toy_anomaly(rng, toy.center, 0.01);
  const auto narrow = solve_counterfactual(toy.model, x, {0.01, 0.9, 1.0}, unit_box(3));
  const auto wide = solve_counterfactual(toy.model, x, {0.01, 0.9, 4.0}, unit_box(3));
  ASSERT_TRUE(narrow.converged && wide.converged);
  EXPECT_LT(wide.deviation.norm(), narrow.deviation.norm());
  EXPECT_LE(wide.error_cf, 0.04);
}

TEST(Counterfactual, RejectsBadInput) {
  Rng rng(2);
  const auto toy = oracle::frozen_toy(rng, 3);
  EXPECT_THROW(solve_counterfactual(toy.model, Eigen::VectorXd::Zero(4), {0.01}, unit_box(3)), LengthMismatch);
  SolverConfig bad;
  bad.lambda_growth = 1.0;
  EXPECT_THROW(solve_counterfactual(toy.model, Eigen::VectorXd::Zero(3), {0.01}, unit_box(3), bad), ConfigError);
  const auto e = solve_counterfactual(toy.model, Eigen::VectorXd::Constant(3, NAN), {0.01}, unit_box(3));
  EXPECT_EQ(e.status, SolveStatus::NonFiniteIterate);
  EXPECT_FALSE(e.converged);
}

TEST(Batch, OrderPreservedAndParallelIdentical) {
  Rng rng(4);
  const auto toy = oracle::frozen_toy(rng, 3);
  Eigen::MatrixXd xs(3, 6);
  for (Eigen::Index c = 0; c < 6; ++c) xs.col(c) = oracle::toy_anomaly(rng, toy.center, 0.01);
  const std::vector<std::int64_t> ids{5, 3, 9, 1, 0, 7};
  const auto a = explain_batch(toy.model, xs, ids, {0.01}, unit_box(3), {}, 1);
  const auto b = explain_batch(toy.model, xs, ids, {0.01}, unit_box(3), {}, 3);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    EXPECT_EQ(a[i].window_id, ids[i]);
    EXPECT_EQ(a[i].x_cf, b[i].x_cf);
  }
}

TEST(Aggregate, MeansOverConvergedOnly) {
  std::vector<Explanation> es(3);
  es[0].deviation = Eigen::Vector2d(1, -2);
  es[0].converged = true;
  es[1].deviation = Eigen::Vector2d(3, 2);
  es[1].converged = true;
  es[2].deviation = Eigen::Vector2d(100, 100);
  es[2].converged = false;
  const auto g = aggregate(es, "DoS");
  EXPECT_EQ(g.count, 2u);
  EXPECT_EQ(g.excluded, 1u);
  EXPECT_EQ(g.mean_deviation, Eigen::Vector2d(2, 0));
  EXPECT_EQ(g.mean_abs_deviation, Eigen::Vector2d(2, 2));
  EXPECT_THROW(aggregate(std::span(es).subspan(2), "x"), NoConvergedSamples);
}

TEST(Histograms, CountsCoverEveryPopulation) {
  Rng rng(6);
  Eigen::MatrixXd base(2, 40), attack(2, 25), cf(2, 25);
  for (Eigen::Index i = 0; i < base.size(); ++i) base.data()[i] = rng.uniform(0, 1);
  for (Eigen::Index i = 0; i < attack.size(); ++i) attack.data()[i] = rng.uniform(3, 5);
  for (Eigen::Index i = 0; i < cf.size(); ++i) cf.data()[i] = rng.uniform(-1, 0.5);
  const std::vector<std::size_t> feats{0, 1};
  const auto hs = distribution_report(base, attack, cf, feats, 50);
  ASSERT_EQ(hs.size(), 2u);
  for (const auto& h : hs) {
    EXPECT_EQ(std::accumulate(h.baseline.begin(), h.baseline.end(), std::size_t{0}), 40u);
    EXPECT_EQ(std::accumulate(h.attack.begin(), h.attack.end(), std::size_t{0}), 25u);
    EXPECT_EQ(std::accumulate(h.counterfactual.begin(), h.counterfactual.end(), std::size_t{0}), 25u);
    EXPECT_LE(h.lo, cf.row(static_cast<Eigen::Index>(h.feature)).minCoeff());
    EXPECT_GE(h.hi, attack.row(static_cast<Eigen::Index>(h.feature)).maxCoeff());
  }
  const auto same = distribution_report(base, base, base, feats, 10);
  EXPECT_EQ(same[0].baseline, same[0].attack);
  EXPECT_EQ(same[0].attack, same[0].counterfactual);
}
