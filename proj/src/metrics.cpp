// SPDX-License-Identifier: Apache-2.0
#include "rxads/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "rxads/error.hpp"

namespace rxads::eval {

namespace {

double ratio(std::size_t num, std::size_t den, bool& degenerate) {
  degenerate = den == 0;
  return degenerate ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string percent(double v, bool degenerate) { return degenerate ? "-" : fmt::format("{:.2f}", 100.0 * v); }

}  // namespace

Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m{tp, fp, tn, fn};
  bool unused = false;
  m.accuracy = ratio(tp + tn, m.total(), unused);
  m.precision = ratio(tp, tp + fp, m.precision_degenerate);
  m.recall = ratio(tp, tp + fn, m.recall_degenerate);
  m.specificity = ratio(tn, tn + fp, m.specificity_degenerate);
  m.f1_degenerate = m.precision_degenerate || m.recall_degenerate || m.precision + m.recall == 0.0;
  m.f1 = m.f1_degenerate ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

Metrics confusion(std::span<const detect::Prediction> predicted, std::span<const features::WindowLabel> labels) {
  if (predicted.size() != labels.size())
    throw LengthMismatch(fmt::format("confusion: {} predictions vs {} labels", predicted.size(), labels.size()));
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pos_pred = predicted[i] == detect::Prediction::Anomaly;
    const bool pos_true = labels[i] == features::WindowLabel::Attack;
    if (pos_pred && pos_true) ++tp;
    else if (pos_pred) ++fp;
    else if (pos_true) ++fn;
    else ++tn;
  }
  return from_counts(tp, fp, tn, fn);
}

std::string summarize(std::span<const DatasetMetrics> rows) {
  if (rows.empty()) return {};
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.dataset.size());
  std::string out = fmt::format("{:<8} | {:<{}} | {:>8} | {:>9} | {:>8} | {:>8}\n", "Method", "Data", width,
                                "Accuracy", "Precision", "Recall", "F1");
  out += std::string(out.size() - 1, '-') + '\n';
  for (const auto& r : rows) {
    const Metrics& m = r.metrics;
    out += fmt::format("{:<8} | {:<{}} | {:>8} | {:>9} | {:>8} | {:>8}\n", "RX-ADS", r.dataset, width,
                       percent(m.accuracy, m.total() == 0), percent(m.precision, m.precision_degenerate),
                       percent(m.recall, m.recall_degenerate), percent(m.f1, m.f1_degenerate));
  }
  return out;
}

nlohmann::json to_json(const Metrics& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"tn", m.tn},
          {"fn", m.fn},
          {"total", m.total()},
          {"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"specificity", m.specificity},
          {"degenerate",
           {{"precision", m.precision_degenerate},
            {"recall", m.recall_degenerate},
            {"f1", m.f1_degenerate},
            {"specificity", m.specificity_degenerate}}}};
}

}  // namespace rxads::eval
