// SPDX-License-Identifier: Apache-2.0
#include "rxads/can_io.hpp"

#include <fmt/format.h>

#include <fstream>
#include <istream>
#include <ostream>

#include "rxads/error.hpp"
#include "rxads/text.hpp"

namespace rxads::can {

namespace {

[[noreturn]] void malformed(std::string_view line, std::string_view why) {
  throw MalformedLine(fmt::format("{}: '{}'", why, line));
}

std::uint32_t parse_id(std::string_view line, std::string_view token) {
  const auto id = text::parse_hex(token, 8);
  if (!id || *id > kMaxCanId) malformed(line, "bad CAN id");
  return static_cast<std::uint32_t>(*id);
}

double parse_timestamp(std::string_view line, std::string_view token) {
  const auto ts = text::parse_real(token);
  if (!ts || *ts < 0.0) malformed(line, "bad timestamp");
  return *ts;
}

int parse_dlc(std::string_view line, std::string_view token) {
  const auto dlc = text::parse_int(token);
  if (!dlc || *dlc < 0 || *dlc > kMaxDlc) malformed(line, "bad DLC");
  return static_cast<int>(*dlc);
}

std::uint8_t parse_byte(std::string_view line, std::string_view token) {
  const auto b = text::parse_hex(token, 2);
  if (!b) malformed(line, "bad payload byte");
  return static_cast<std::uint8_t>(*b);
}

std::string hex_bytes(std::span<const std::uint8_t> bytes, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i > 0) out += sep;
    out += fmt::format("{:02x}", bytes[i]);
  }
  return out;
}

}  // namespace

std::string canonical_id_text(std::uint32_t can_id) {
  return can_id > 0xFFFF ? fmt::format("{:08x}", can_id) : fmt::format("{:04x}", can_id);
}

CanFrame make_frame(double timestamp, std::uint32_t can_id, FrameKind kind, int dlc,
                    std::vector<std::uint8_t> payload, FrameLabel label) {
  CanFrame f;
  f.timestamp = timestamp;
  f.can_id = can_id;
  f.id_text = canonical_id_text(can_id);
  f.dlc = dlc;
  f.payload = std::move(payload);
  f.kind = kind;
  f.label = label;
  return f;
}

std::string check_frame(const CanFrame& frame) {
  if (!(frame.timestamp >= 0.0)) return "negative or non-finite timestamp";
  if (frame.can_id > kMaxCanId) return "CAN id out of range";
  if (frame.dlc < 0 || frame.dlc > kMaxDlc) return "DLC out of range";
  if (frame.kind == FrameKind::Data && frame.payload.size() != static_cast<std::size_t>(frame.dlc))
    return "data frame payload length differs from DLC";
  if (frame.kind == FrameKind::Remote && !frame.payload.empty()) return "remote frame carries payload";
  return {};
}

CanFrame parse_otids_line(std::string_view line) {
  const auto tok = text::split_whitespace(line);
  // Timestamp: <t> ID: <id> <flag> DLC: <n> [bytes]
  if (tok.size() < 7 || tok[0] != "Timestamp:" || tok[2] != "ID:" || tok[5] != "DLC:")
    malformed(line, "not an OTIDS record");

  CanFrame f;
  f.timestamp = parse_timestamp(line, tok[1]);
  f.can_id = parse_id(line, tok[3]);
  f.id_text = std::string(tok[3]);
  if (tok[4] == "000") {
    f.kind = FrameKind::Data;
  } else if (tok[4] == "100") {
    f.kind = FrameKind::Remote;
  } else {
    malformed(line, "bad remote flag");
  }
  f.dlc = parse_dlc(line, tok[6]);
  f.label = FrameLabel::Unknown;

  const std::size_t expected_bytes = f.kind == FrameKind::Data ? static_cast<std::size_t>(f.dlc) : 0;
  if (tok.size() - 7 != expected_bytes) malformed(line, "payload byte count does not match DLC");
  f.payload.reserve(expected_bytes);
  for (std::size_t i = 7; i < tok.size(); ++i) f.payload.push_back(parse_byte(line, tok[i]));
  return f;
}

CanFrame parse_carhacking_row(std::string_view row) {
  const auto fields = text::split(text::trim(row), ',');
  if (fields.size() < 4) malformed(row, "too few fields");

  CanFrame f;
  f.timestamp = parse_timestamp(row, fields[0]);
  const auto id_token = text::trim(fields[1]);
  f.can_id = parse_id(row, id_token);
  f.id_text = std::string(id_token);
  f.dlc = parse_dlc(row, fields[2]);
  f.kind = FrameKind::Data;
  if (fields.size() != static_cast<std::size_t>(f.dlc) + 4) malformed(row, "field count does not match DLC");
  for (int i = 0; i < f.dlc; ++i) f.payload.push_back(parse_byte(row, fields[3 + i]));

  const auto flag = text::trim(fields.back());
  if (flag == "R") {
    f.label = FrameLabel::Normal;
  } else if (flag == "T") {
    f.label = FrameLabel::Injected;
  } else {
    malformed(row, "bad injection flag");
  }
  return f;
}

CanFrame parse_normalized_row(std::string_view row) {
  const auto fields = text::split(text::trim(row), ',');
  if (fields.size() != 6) malformed(row, "expected 6 fields");

  CanFrame f;
  f.timestamp = parse_timestamp(row, fields[0]);
  f.can_id = parse_id(row, fields[1]);
  f.id_text = std::string(text::trim(fields[1]));
  f.dlc = parse_dlc(row, fields[2]);

  const auto kind = text::trim(fields[3]);
  if (kind == "Data") {
    f.kind = FrameKind::Data;
  } else if (kind == "Remote") {
    f.kind = FrameKind::Remote;
  } else {
    malformed(row, "bad frame kind");
  }

  const auto label = text::trim(fields[4]);
  if (label == "Normal") {
    f.label = FrameLabel::Normal;
  } else if (label == "Injected") {
    f.label = FrameLabel::Injected;
  } else if (label == "Unknown") {
    f.label = FrameLabel::Unknown;
  } else {
    malformed(row, "bad label");
  }

  const auto hex = text::trim(fields[5]);
  if (hex.size() % 2 != 0) malformed(row, "odd payload hex length");
  for (std::size_t i = 0; i < hex.size(); i += 2) f.payload.push_back(parse_byte(row, hex.substr(i, 2)));

  if (auto why = check_frame(f); !why.empty()) malformed(row, why);
  return f;
}

std::string format_otids_line(const CanFrame& frame) {
  std::string line = fmt::format("Timestamp: {} ID: {} {} DLC: {}", text::format_real(frame.timestamp),
                                 frame.id_text, frame.kind == FrameKind::Remote ? "100" : "000", frame.dlc);
  if (!frame.payload.empty()) {
    line += ' ';
    line += hex_bytes(frame.payload, " ");
  }
  return line;
}

std::string format_carhacking_row(const CanFrame& frame) {
  std::string row = fmt::format("{},{},{}", text::format_real(frame.timestamp), frame.id_text, frame.dlc);
  for (auto b : frame.payload) row += fmt::format(",{:02x}", b);
  row += frame.label == FrameLabel::Injected ? ",T" : ",R";
  return row;
}

std::string format_normalized_row(const CanFrame& frame) {
  return fmt::format("{},{},{},{},{},{}", text::format_real(frame.timestamp), frame.id_text, frame.dlc,
                     to_string(frame.kind), to_string(frame.label), hex_bytes(frame.payload, ""));
}

CaptureFormat parse_capture_format(std::string_view name) {
  if (name == "otids") return CaptureFormat::Otids;
  if (name == "carhacking") return CaptureFormat::CarHacking;
  if (name == "normalized") return CaptureFormat::Normalized;
  throw ConfigError(fmt::format("unknown capture format '{}'", name));
}

std::string_view to_string(CaptureFormat format) {
  switch (format) {
    case CaptureFormat::Otids: return "otids";
    case CaptureFormat::CarHacking: return "carhacking";
    case CaptureFormat::Normalized: return "normalized";
  }
  return "?";
}

std::string_view to_string(CaptureSource source) {
  switch (source) {
    case CaptureSource::OtidsText: return "OtidsText";
    case CaptureSource::CarHackingCsv: return "CarHackingCsv";
    case CaptureSource::Synthetic: return "Synthetic";
  }
  return "?";
}

std::string_view to_string(FrameKind kind) { return kind == FrameKind::Remote ? "Remote" : "Data"; }

std::string_view to_string(FrameLabel label) {
  switch (label) {
    case FrameLabel::Normal: return "Normal";
    case FrameLabel::Injected: return "Injected";
    case FrameLabel::Unknown: return "Unknown";
  }
  return "?";
}

Capture read_capture(std::istream& in, CaptureFormat format, const LoadOptions& options) {
  Capture cap;
  switch (format) {
    case CaptureFormat::Otids: cap.meta.source = CaptureSource::OtidsText; break;
    case CaptureFormat::CarHacking: cap.meta.source = CaptureSource::CarHackingCsv; break;
    // normalized dumps are what the synthetic generator writes
    case CaptureFormat::Normalized: cap.meta.source = CaptureSource::Synthetic; break;
  }

  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const auto view = text::trim(line);
    if (view.empty()) continue;
    if (first && format == CaptureFormat::Normalized && view == kNormalizedHeader) {
      first = false;
      continue;
    }
    first = false;
    ++cap.meta.total_lines;
    try {
      CanFrame f;
      switch (format) {
        case CaptureFormat::Otids: f = parse_otids_line(view); break;
        case CaptureFormat::CarHacking: f = parse_carhacking_row(view); break;
        case CaptureFormat::Normalized: f = parse_normalized_row(view); break;
      }
      if (!cap.frames.empty() && f.timestamp < cap.frames.back().timestamp)
        throw MalformedLine(fmt::format("timestamp goes backwards: '{}'", view));
      cap.frames.push_back(std::move(f));
    } catch (const MalformedLine& e) {
      if (cap.meta.malformed_lines++ == 0) cap.meta.first_error = e.what();
    }
  }

  if (options.strict && cap.meta.total_lines > 0) {
    const double fraction =
        static_cast<double>(cap.meta.malformed_lines) / static_cast<double>(cap.meta.total_lines);
    if (fraction > options.max_malformed_fraction)
      throw FormatError(fmt::format("{} of {} lines malformed (first: {})", cap.meta.malformed_lines,
                                    cap.meta.total_lines, cap.meta.first_error));
  }

  cap.meta.frame_count = cap.frames.size();
  if (!cap.frames.empty()) cap.meta.time_span = cap.frames.back().timestamp - cap.frames.front().timestamp;
  return cap;
}

Capture load_capture(const std::filesystem::path& path, CaptureFormat format, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open capture '{}'", path.string()));
  return read_capture(in, format, options);
}

void write_normalized_csv(std::ostream& out, std::span<const CanFrame> frames) {
  out << kNormalizedHeader << '\n';
  for (const auto& f : frames) out << format_normalized_row(f) << '\n';
}

void write_normalized_csv(const std::filesystem::path& path, std::span<const CanFrame> frames) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  write_normalized_csv(out, frames);
  if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

}  // namespace rxads::can
