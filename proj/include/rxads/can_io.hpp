// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rxads::can {

inline constexpr std::uint32_t kMaxCanId = 0x1FFFFFFF;
inline constexpr int kMaxDlc = 8;

enum class FrameKind { Data, Remote };
enum class FrameLabel { Normal, Injected, Unknown };

/// One CAN log record. Only the fields present in the capture formats are
/// modelled; CRC/ACK/EOF never appear in the logs.
struct CanFrame {
  double timestamp = 0.0;  // seconds
  std::uint32_t can_id = 0;
  std::string id_text;  // the hex text as it appeared in the source
  int dlc = 0;
  std::vector<std::uint8_t> payload;
  FrameKind kind = FrameKind::Data;
  FrameLabel label = FrameLabel::Unknown;

  bool operator==(const CanFrame&) const = default;
};

/// Builds a frame with a canonical lowercase id_text ("%04x", or "%08x" for
/// extended identifiers).
CanFrame make_frame(double timestamp, std::uint32_t can_id, FrameKind kind, int dlc,
                    std::vector<std::uint8_t> payload, FrameLabel label);

std::string canonical_id_text(std::uint32_t can_id);

/// Returns an empty string when the frame satisfies every per-frame
/// invariant, otherwise a description of the first violation.
std::string check_frame(const CanFrame& frame);

/// `Timestamp: <f> ID: <hex> <000|100> DLC: <n> <bytes...>`; flag 100 marks a
/// remote frame, which carries no payload bytes.
CanFrame parse_otids_line(std::string_view line);

/// `timestamp,id,dlc,byte0,...,byte{dlc-1},flag` with flag R (normal) or
/// T (injected). Always a data frame.
CanFrame parse_carhacking_row(std::string_view row);

/// Normalized dump row: `timestamp,id_hex,dlc,kind,label,payload_hex`.
CanFrame parse_normalized_row(std::string_view row);

std::string format_otids_line(const CanFrame& frame);
std::string format_carhacking_row(const CanFrame& frame);
std::string format_normalized_row(const CanFrame& frame);

inline constexpr std::string_view kNormalizedHeader = "timestamp,id_hex,dlc,kind,label,payload_hex";

enum class CaptureFormat { Otids, CarHacking, Normalized };
enum class CaptureSource { OtidsText, CarHackingCsv, Synthetic };

CaptureFormat parse_capture_format(std::string_view name);
std::string_view to_string(CaptureFormat format);
std::string_view to_string(CaptureSource source);
std::string_view to_string(FrameKind kind);
std::string_view to_string(FrameLabel label);

struct CaptureMeta {
  CaptureSource source = CaptureSource::Synthetic;
  std::size_t frame_count = 0;
  double time_span = 0.0;
  std::size_t malformed_lines = 0;
  std::size_t total_lines = 0;  // non-blank lines examined
  std::string first_error;      // message for the first malformed line, if any
};

struct Capture {
  std::vector<CanFrame> frames;
  CaptureMeta meta;
};

struct LoadOptions {
  bool strict = false;
  double max_malformed_fraction = 0.01;  // strict mode only
};

/// Reads a capture in file order. Lines that fail to parse, or that would
/// make timestamps decrease, are dropped and counted in the meta; strict mode
/// raises FormatError once the malformed fraction exceeds the limit.
Capture load_capture(const std::filesystem::path& path, CaptureFormat format,
                     const LoadOptions& options = {});

Capture read_capture(std::istream& in, CaptureFormat format, const LoadOptions& options = {});

void write_normalized_csv(std::ostream& out, std::span<const CanFrame> frames);
void write_normalized_csv(const std::filesystem::path& path, std::span<const CanFrame> frames);

}  // namespace rxads::can
