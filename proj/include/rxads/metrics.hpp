// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rxads/detector.hpp"
#include "rxads/features.hpp"

namespace rxads::eval {

/// Confusion counts with Anomaly/Attack as the positive class. A rate whose
/// denominator is zero is reported as 0 and flagged degenerate.
struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;  // tn / (tn + fp)
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
  bool specificity_degenerate = false;

  std::size_t total() const { return tp + fp + tn + fn; }
};

Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

Metrics confusion(std::span<const detect::Prediction> predicted, std::span<const features::WindowLabel> labels);

struct DatasetMetrics {
  std::string dataset;
  Metrics metrics;
};

/// Plain-text table: Method | Data | Accuracy | Precision | Recall | F1, in
/// percent with two decimals; degenerate rates print as "-".
std::string summarize(std::span<const DatasetMetrics> rows);

nlohmann::json to_json(const Metrics& m);

}  // namespace rxads::eval
