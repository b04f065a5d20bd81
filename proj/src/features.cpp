// SPDX-License-Identifier: Apache-2.0
#include "rxads/features.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <unordered_map>

#include "rxads/error.hpp"
#include "rxads/parallel.hpp"
#include "rxads/text.hpp"

namespace rxads::features {

using can::CanFrame;
using can::FrameKind;

const std::array<std::string_view, kFixedColumnCount> kFixedColumnNames{
    "no_of_records",
    "no_of_ids",
    "no_of_dlc",
    "min_time_interval",
    "max_time_interval",
    "mean_time_interval",
    "no_of_req_msgs",
    "no_of_res",
    "no_of_lost",
    "min_ratio",
    "max_ratio",
    "mean_ratio",
    "instant_reply_count",
    "min_reply_time_interval",
    "max_reply_time_interval",
    "mean_reply_time_interval",
    "high_priority_count",
    "no_odd_ids",
};

std::string_view to_string(WindowLabel label) { return label == WindowLabel::Attack ? "Attack" : "Normal"; }

std::string id_column_name(std::uint32_t id) { return fmt::format("no_{:04X}", id); }

std::string payload_column_name(std::uint32_t id, int byte_index) {
  return fmt::format("payload_p{}_{:04X}", byte_index + 1, id);
}

FeatureSchema::FeatureSchema(std::vector<std::uint32_t> baseline_ids, bool include_payload,
                             std::vector<PayloadColumn> payload_columns)
    : baseline_ids_(std::move(baseline_ids)),
      include_payload_(include_payload),
      payload_columns_(std::move(payload_columns)) {
  std::sort(baseline_ids_.begin(), baseline_ids_.end());
  if (std::adjacent_find(baseline_ids_.begin(), baseline_ids_.end()) != baseline_ids_.end())
    throw ConfigError("schema: duplicate baseline id");
  if (!include_payload_ && !payload_columns_.empty())
    throw ConfigError("schema: payload columns given with include_payload=false");

  for (auto name : kFixedColumnNames) names_.emplace_back(name);
  for (auto id : baseline_ids_) {
    id_columns_.emplace(id, names_.size());
    names_.push_back(id_column_name(id));
  }
  for (const auto& pc : payload_columns_) {
    if (pc.byte_index < 0 || pc.byte_index >= can::kMaxDlc)
      throw ConfigError("schema: payload byte index out of range");
    if (!payload_index_.emplace(std::pair{pc.can_id, pc.byte_index}, names_.size()).second)
      throw ConfigError("schema: duplicate payload column");
    names_.push_back(payload_column_name(pc.can_id, pc.byte_index));
  }
}

bool FeatureSchema::is_baseline_id(std::uint32_t id) const { return id_columns_.count(id) != 0; }

std::optional<std::size_t> FeatureSchema::id_column(std::uint32_t id) const {
  auto it = id_columns_.find(id);
  if (it == id_columns_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> FeatureSchema::payload_column(std::uint32_t id, int byte_index) const {
  auto it = payload_index_.find({id, byte_index});
  if (it == payload_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

bool FeatureSchema::operator==(const FeatureSchema& other) const {
  return baseline_ids_ == other.baseline_ids_ && include_payload_ == other.include_payload_ &&
         payload_columns_ == other.payload_columns_;
}

FeatureSchema fit_schema(std::span<const CanFrame> baseline_frames, bool include_payload) {
  if (baseline_frames.empty()) throw EmptyCapture("fit_schema: baseline capture has no frames");
  std::set<std::uint32_t> ids;
  std::map<std::uint32_t, int> max_dlc;
  for (const auto& f : baseline_frames) {
    ids.insert(f.can_id);
    if (f.kind == FrameKind::Data) {
      int& m = max_dlc[f.can_id];
      m = std::max(m, static_cast<int>(f.payload.size()));
    }
  }
  std::vector<PayloadColumn> payload;
  if (include_payload) {
    for (auto [id, n] : max_dlc)
      for (int b = 0; b < n; ++b) payload.push_back({id, b});
  }
  return FeatureSchema({ids.begin(), ids.end()}, include_payload, std::move(payload));
}

WindowLabel label_window(std::span<const CanFrame> contained) {
  for (const auto& f : contained)
    if (f.label == can::FrameLabel::Injected) return WindowLabel::Attack;
  return WindowLabel::Normal;
}

namespace {

// min/max/mean accumulator; empty aggregates report 0.
struct Aggregate {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  std::size_t n = 0;

  void add(double v) {
    min = std::min(min, v);
    max = std::max(max, v);
    sum += v;
    ++n;
  }
  void store(std::vector<double>& out, std::size_t min_col, std::size_t max_col, std::size_t mean_col) const {
    if (n == 0) return;
    out[min_col] = min;
    out[max_col] = max;
    out[mean_col] = sum / static_cast<double>(n);
  }
};

}  // namespace

std::vector<double> compute_window(std::span<const CanFrame> w, const FeatureSchema& schema) {
  std::vector<double> v(schema.size(), 0.0);
  if (w.empty()) return v;

  std::set<std::uint32_t> ids;
  std::array<bool, can::kMaxDlc + 1> dlc_seen{};
  Aggregate interval;
  std::size_t requests = 0;
  std::size_t high_priority = 0;
  std::size_t odd = 0;

  // Request/response pairing: a data frame answers the oldest pending remote
  // request with the same ID.
  std::unordered_map<std::uint32_t, std::deque<std::size_t>> pending;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (request, response) indices

  std::vector<double> payload_sum(schema.payload_columns().size(), 0.0);
  std::vector<std::size_t> payload_n(schema.payload_columns().size(), 0);
  const std::size_t payload_base = kFixedColumnCount + schema.baseline_ids().size();

  for (std::size_t i = 0; i < w.size(); ++i) {
    const CanFrame& f = w[i];
    ids.insert(f.can_id);
    dlc_seen[static_cast<std::size_t>(f.dlc)] = true;
    if (i > 0) interval.add(f.timestamp - w[i - 1].timestamp);
    if (f.can_id == 0) ++high_priority;
    if (auto col = schema.id_column(f.can_id)) {
      v[*col] += 1.0;
    } else {
      ++odd;
    }

    if (f.kind == FrameKind::Remote) {
      ++requests;
      pending[f.can_id].push_back(i);
    } else {
      if (auto it = pending.find(f.can_id); it != pending.end() && !it->second.empty()) {
        pairs.emplace_back(it->second.front(), i);
        it->second.pop_front();
      }
      if (schema.include_payload()) {
        for (std::size_t b = 0; b < f.payload.size(); ++b) {
          if (auto col = schema.payload_column(f.can_id, static_cast<int>(b))) {
            payload_sum[*col - payload_base] += f.payload[b];
            ++payload_n[*col - payload_base];
          }
        }
      }
    }
  }

  std::sort(pairs.begin(), pairs.end());
  Aggregate ratio;
  Aggregate reply;
  std::size_t instant = 0;
  for (auto [req, res] : pairs) {
    const std::size_t between = res - req - 1;
    ratio.add(static_cast<double>(between));
    reply.add(w[res].timestamp - w[req].timestamp);
    if (between == 0) ++instant;
  }

  v[kNoOfRecords] = static_cast<double>(w.size());
  v[kNoOfIds] = static_cast<double>(ids.size());
  v[kNoOfDlc] = static_cast<double>(std::count(dlc_seen.begin(), dlc_seen.end(), true));
  interval.store(v, kMinTimeInterval, kMaxTimeInterval, kMeanTimeInterval);
  v[kNoOfReqMsgs] = static_cast<double>(requests);
  v[kNoOfRes] = static_cast<double>(pairs.size());
  v[kNoOfLost] = static_cast<double>(requests - pairs.size());
  ratio.store(v, kMinRatio, kMaxRatio, kMeanRatio);
  v[kInstantReplyCount] = static_cast<double>(instant);
  reply.store(v, kMinReplyTimeInterval, kMaxReplyTimeInterval, kMeanReplyTimeInterval);
  v[kHighPriorityCount] = static_cast<double>(high_priority);
  v[kNoOddIds] = static_cast<double>(odd);
  for (std::size_t k = 0; k < payload_sum.size(); ++k)
    if (payload_n[k] > 0) v[payload_base + k] = payload_sum[k] / static_cast<double>(payload_n[k]);
  return v;
}

std::vector<double> window_starts(std::span<const CanFrame> frames, const WindowSpec& spec) {
  if (!(spec.win_size > 0.0)) throw ConfigError("window size must be > 0");
  std::vector<double> starts;
  if (frames.empty()) return starts;
  const double origin = spec.start_time.value_or(frames.front().timestamp);
  const double last = frames.back().timestamp;
  // start_k = origin + k*stride, computed directly so rounding does not accumulate
  for (std::int64_t k = 0;; ++k) {
    const double start = origin + static_cast<double>(k) * spec.stride();
    if (!(start < last)) break;
    starts.push_back(start);
  }
  return starts;
}

std::vector<FeatureVector> extract_features(std::span<const CanFrame> frames, const WindowSpec& spec,
                                            const FeatureSchema& schema, unsigned jobs) {
  const auto starts = window_starts(frames, spec);
  std::vector<FeatureVector> out(starts.size());
  auto by_time = [](const CanFrame& f, double t) { return f.timestamp < t; };
  parallel_for(starts.size(), jobs, [&](std::size_t k) {
    const double start = starts[k];
    const double end = start + spec.win_size;
    auto first = std::lower_bound(frames.begin(), frames.end(), start, by_time);
    auto last = std::lower_bound(first, frames.end(), end, by_time);
    const std::span<const CanFrame> window(first, last);

    FeatureVector& fv = out[k];
    fv.window_id = static_cast<std::int64_t>(k);
    fv.window_start = start;
    fv.values = compute_window(window, schema);
    fv.window_label = label_window(window);
    fv.contains_frames = static_cast<std::int64_t>(window.size());
  });
  return out;
}

nlohmann::json schema_to_json(const FeatureSchema& schema) {
  nlohmann::json payload = nlohmann::json::array();
  for (const auto& pc : schema.payload_columns()) payload.push_back({pc.can_id, pc.byte_index});
  return {
      {"names", schema.names()},
      {"baseline_ids", schema.baseline_ids()},
      {"include_payload", schema.include_payload()},
      {"payload_columns", payload},
  };
}

FeatureSchema schema_from_json(const nlohmann::json& j) {
  try {
    std::vector<PayloadColumn> payload;
    for (const auto& pc : j.at("payload_columns"))
      payload.push_back({pc.at(0).get<std::uint32_t>(), pc.at(1).get<int>()});
    FeatureSchema schema(j.at("baseline_ids").get<std::vector<std::uint32_t>>(), j.at("include_payload").get<bool>(),
                         std::move(payload));
    if (j.contains("names") && j.at("names").get<std::vector<std::string>>() != schema.names())
      throw FormatError("schema: stored column names do not match the layout");
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("schema: {}", e.what()));
  }
}

void write_feature_csv(std::ostream& out, const FeatureSchema& schema, std::span<const FeatureVector> rows) {
  out << "window_id,window_start,window_label,contains_frames";
  for (const auto& name : schema.names()) out << ',' << name;
  out << '\n';
  for (const auto& r : rows) {
    if (r.values.size() != schema.size()) throw LengthMismatch("feature row length differs from schema");
    out << r.window_id << ',' << text::format_real(r.window_start) << ',' << to_string(r.window_label) << ','
        << r.contains_frames;
    for (double v : r.values) out << ',' << text::format_real(v);
    out << '\n';
  }
}

void write_feature_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                       std::span<const FeatureVector> rows) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  write_feature_csv(out, schema, rows);
  if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

std::vector<FeatureVector> read_feature_csv(std::istream& in, const FeatureSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("feature csv: missing header");
  const auto header = text::split(text::trim(line), ',');
  if (header.size() != schema.size() + 4) throw FormatError("feature csv: header does not match schema");
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (header[i + 4] != schema.names()[i])
      throw FormatError(fmt::format("feature csv: column '{}' where '{}' expected", header[i + 4], schema.names()[i]));

  std::vector<FeatureVector> rows;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), ',');
    if (f.size() != header.size()) throw FormatError(fmt::format("feature csv: bad row '{}'", line));
    FeatureVector fv;
    auto id = text::parse_int(f[0]);
    auto start = text::parse_real(f[1]);
    auto n = text::parse_int(f[3]);
    if (!id || !start || !n || (f[2] != "Normal" && f[2] != "Attack"))
      throw FormatError(fmt::format("feature csv: bad row '{}'", line));
    fv.window_id = *id;
    fv.window_start = *start;
    fv.window_label = f[2] == "Attack" ? WindowLabel::Attack : WindowLabel::Normal;
    fv.contains_frames = *n;
    fv.values.reserve(schema.size());
    for (std::size_t i = 4; i < f.size(); ++i) {
      auto v = text::parse_real(f[i]);
      if (!v) throw FormatError(fmt::format("feature csv: bad value '{}'", f[i]));
      fv.values.push_back(*v);
    }
    rows.push_back(std::move(fv));
  }
  return rows;
}

std::vector<FeatureVector> read_feature_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  return read_feature_csv(in, schema);
}

}  // namespace rxads::features
