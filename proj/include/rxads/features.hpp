// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rxads/can_io.hpp"

namespace rxads::features {

/// Time window geometry. Consecutive windows overlap by half: the stride is
/// always win_size / 2. Units follow the capture timestamps (seconds).
struct WindowSpec {
  double win_size = 0.05;
  std::optional<double> start_time;  // defaults to the first frame timestamp

  double stride() const { return win_size / 2.0; }
};

enum class WindowLabel { Normal, Attack };
std::string_view to_string(WindowLabel label);

// Fixed leading columns, in schema order.
enum FixedColumn : std::size_t {
  kNoOfRecords,
  kNoOfIds,
  kNoOfDlc,
  kMinTimeInterval,
  kMaxTimeInterval,
  kMeanTimeInterval,
  kNoOfReqMsgs,
  kNoOfRes,
  kNoOfLost,
  kMinRatio,
  kMaxRatio,
  kMeanRatio,
  kInstantReplyCount,
  kMinReplyTimeInterval,
  kMaxReplyTimeInterval,
  kMeanReplyTimeInterval,
  kHighPriorityCount,
  kNoOddIds,
  kFixedColumnCount
};

extern const std::array<std::string_view, kFixedColumnCount> kFixedColumnNames;

struct PayloadColumn {
  std::uint32_t can_id = 0;
  int byte_index = 0;
  bool operator==(const PayloadColumn&) const = default;
};

/// Ordered, immutable column layout: the fixed columns, one message count
/// per baseline ID (ascending), then optional per-(ID, byte) payload means.
class FeatureSchema {
 public:
  FeatureSchema(std::vector<std::uint32_t> baseline_ids, bool include_payload,
                std::vector<PayloadColumn> payload_columns);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::uint32_t>& baseline_ids() const { return baseline_ids_; }
  bool include_payload() const { return include_payload_; }
  const std::vector<PayloadColumn>& payload_columns() const { return payload_columns_; }

  bool is_baseline_id(std::uint32_t id) const;
  std::optional<std::size_t> id_column(std::uint32_t id) const;
  std::optional<std::size_t> payload_column(std::uint32_t id, int byte_index) const;
  std::optional<std::size_t> index_of(std::string_view name) const;

  bool operator==(const FeatureSchema& other) const;

 private:
  std::vector<std::uint32_t> baseline_ids_;
  bool include_payload_;
  std::vector<PayloadColumn> payload_columns_;
  std::vector<std::string> names_;
  std::map<std::uint32_t, std::size_t> id_columns_;
  std::map<std::pair<std::uint32_t, int>, std::size_t> payload_index_;
};

std::string id_column_name(std::uint32_t id);
std::string payload_column_name(std::uint32_t id, int byte_index);

/// Payload columns cover bytes 0..max_dlc-1 of each baseline data ID.
FeatureSchema fit_schema(std::span<const can::CanFrame> baseline_frames, bool include_payload);

struct FeatureVector {
  std::int64_t window_id = 0;
  double window_start = 0.0;
  std::vector<double> values;
  WindowLabel window_label = WindowLabel::Normal;
  std::int64_t contains_frames = 0;
};

/// Attack iff any frame carries the Injected label.
WindowLabel label_window(std::span<const can::CanFrame> contained);

/// Start times of every window: start + k*stride for all k with start < last
/// timestamp.
std::vector<double> window_starts(std::span<const can::CanFrame> frames, const WindowSpec& spec);

/// Features for one window's frames (already selected, time-ordered).
std::vector<double> compute_window(std::span<const can::CanFrame> window_frames, const FeatureSchema& schema);

/// One vector per window; membership is start <= t < start + win_size.
/// Frames must be time-sorted.
std::vector<FeatureVector> extract_features(std::span<const can::CanFrame> frames, const WindowSpec& spec,
                                            const FeatureSchema& schema, unsigned jobs = 1);

nlohmann::json schema_to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const nlohmann::json& j);

// Feature matrix CSV: window_id,window_start,window_label,contains_frames,<schema names...>
void write_feature_csv(std::ostream& out, const FeatureSchema& schema, std::span<const FeatureVector> rows);
void write_feature_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                       std::span<const FeatureVector> rows);
std::vector<FeatureVector> read_feature_csv(std::istream& in, const FeatureSchema& schema);
std::vector<FeatureVector> read_feature_csv(const std::filesystem::path& path, const FeatureSchema& schema);

}  // namespace rxads::features
