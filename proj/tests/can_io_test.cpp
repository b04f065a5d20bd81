// SPDX-License-Identifier: Apache-2.0
#include <sstream>

#include <gtest/gtest.h>

#include "rxads/can_io.hpp"
#include "rxads/error.hpp"
#include "rxads/random.hpp"
#include "rxads/synth.hpp"
#include "rxads/text.hpp"

using namespace rxads;
using namespace rxads::can;

TEST(Text, RealsRoundTripThroughShortestForm) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-1e6, 1e6) * std::pow(10.0, rng.uniform(-12, 3));
    const auto s = text::format_real(v);
    ASSERT_EQ(text::parse_real(s), v) << s;
  }
  EXPECT_FALSE(text::parse_real("nan"));
  EXPECT_FALSE(text::parse_real("inf"));
  EXPECT_FALSE(text::parse_real("1.0x"));
  EXPECT_FALSE(text::parse_real(""));
}

TEST(Text, HexParsingRejectsJunk) {
  EXPECT_EQ(text::parse_hex("0316"), 0x316u);
  EXPECT_EQ(text::parse_hex("1FFFFFFF"), 0x1FFFFFFFu);
  EXPECT_FALSE(text::parse_hex("03g6"));
  EXPECT_FALSE(text::parse_hex(""));
  EXPECT_FALSE(text::parse_hex("123", 2));
}

TEST(Otids, DataFrame) {
  const auto f = parse_otids_line("Timestamp: 1.000000 ID: 0000 000 DLC: 8 00 00 00 00 00 00 00 00");
  EXPECT_EQ(f.kind, FrameKind::Data);
  EXPECT_EQ(f.can_id, 0u);
  EXPECT_EQ(f.dlc, 8);
  EXPECT_EQ(f.payload, std::vector<std::uint8_t>(8, 0));
  EXPECT_EQ(f.label, FrameLabel::Unknown);
  EXPECT_DOUBLE_EQ(f.timestamp, 1.0);
}

TEST(Otids, RemoteFrameHasNoPayload) {
  const auto f = parse_otids_line("Timestamp: 0.000000 ID: 0100 100 DLC: 0");
  EXPECT_EQ(f.kind, FrameKind::Remote);
  EXPECT_EQ(f.can_id, 0x100u);
  EXPECT_TRUE(f.payload.empty());
  // Remote frames keep their DLC but never carry bytes.
  const auto g = parse_otids_line("Timestamp: 0.5 ID: 0100 100 DLC: 8");
  EXPECT_EQ(g.dlc, 8);
  EXPECT_TRUE(g.payload.empty());
}

TEST(Otids, MalformedLines) {
  EXPECT_THROW(parse_otids_line("Timestamp: x ID: 0000 000 DLC: 0"), MalformedLine);
  EXPECT_THROW(parse_otids_line("Timestamp: 1.0 ID: 00z0 000 DLC: 0"), MalformedLine);
  EXPECT_THROW(parse_otids_line("Timestamp: 1.0 ID: 0000 010 DLC: 0"), MalformedLine);
  EXPECT_THROW(parse_otids_line("Timestamp: 1.0 ID: 0000 000 DLC: 2 00"), MalformedLine);
  EXPECT_THROW(parse_otids_line("Timestamp: 1.0 ID: 0000 000 DLC: 9"), MalformedLine);
  EXPECT_THROW(parse_otids_line("Timestamp: 1.0 ID: 0100 100 DLC: 1 00"), MalformedLine);
}

TEST(CarHacking, NormalAndInjectedRows) {
  const auto a = parse_carhacking_row("0.000,0316,8,05,21,68,09,21,21,00,6f,R");
  EXPECT_EQ(a.kind, FrameKind::Data);
  EXPECT_EQ(a.label, FrameLabel::Normal);
  EXPECT_EQ(a.can_id, 0x316u);
  EXPECT_EQ(a.payload, (std::vector<std::uint8_t>{0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6f}));

  const auto b = parse_carhacking_row("0.001,0000,8,00,00,00,00,00,00,00,00,T");
  EXPECT_EQ(b.label, FrameLabel::Injected);
  EXPECT_EQ(b.can_id, 0u);
}

TEST(CarHacking, FieldCountMustMatchDlc) {
  EXPECT_THROW(parse_carhacking_row("0.0,0316,8,05,21,68,09,21,R"), MalformedLine);
  EXPECT_THROW(parse_carhacking_row("0.0,0316,2,05,21,X"), MalformedLine);
  EXPECT_NO_THROW(parse_carhacking_row("0.0,0316,0,R"));
}

namespace {

std::vector<CanFrame> random_frames(Rng& rng, std::size_t n, bool allow_remote) {
  std::vector<CanFrame> out;
  double t = rng.uniform(0, 10);
  for (std::size_t i = 0; i < n; ++i) {
    t += rng.exponential(1000.0);
    const bool remote = allow_remote && rng.uniform() < 0.2;
    const int dlc = static_cast<int>(rng.below(9));
    std::vector<std::uint8_t> payload;
    if (!remote)
      for (int b = 0; b < dlc; ++b) payload.push_back(static_cast<std::uint8_t>(rng.below(256)));
    const auto id = static_cast<std::uint32_t>(rng.below(0x800));
    const auto label = rng.uniform() < 0.5 ? FrameLabel::Normal : FrameLabel::Injected;
    out.push_back(make_frame(t, id, remote ? FrameKind::Remote : FrameKind::Data, dlc, payload, label));
  }
  return out;
}

}  // namespace

TEST(RoundTrip, EveryGrammarReproducesTheFrame) {
  Rng rng(11);
  for (const auto& f : random_frames(rng, 2000, true)) {
    auto otids = f;
    otids.label = FrameLabel::Unknown;
    ASSERT_EQ(parse_otids_line(format_otids_line(otids)), otids);
    ASSERT_EQ(parse_normalized_row(format_normalized_row(f)), f);
  }
  for (const auto& f : random_frames(rng, 2000, false)) ASSERT_EQ(parse_carhacking_row(format_carhacking_row(f)), f);
}

TEST(LoadCapture, EmptyInput) {
  std::istringstream in("");
  const auto cap = read_capture(in, CaptureFormat::Otids);
  EXPECT_TRUE(cap.frames.empty());
  EXPECT_EQ(cap.meta.frame_count, 0u);
  EXPECT_EQ(cap.meta.time_span, 0.0);
}

TEST(LoadCapture, ThreeLinesAndTimeSpan) {
  std::istringstream in(
      "Timestamp: 1.5 ID: 0100 100 DLC: 8\n"
      "Timestamp: 1.75 ID: 0100 000 DLC: 1 aa\n"
      "\n"
      "Timestamp: 2.0 ID: 0316 000 DLC: 0\n");
  const auto cap = read_capture(in, CaptureFormat::Otids);
  ASSERT_EQ(cap.frames.size(), 3u);
  EXPECT_EQ(cap.meta.source, CaptureSource::OtidsText);
  EXPECT_DOUBLE_EQ(cap.meta.time_span, 0.5);
  EXPECT_EQ(cap.meta.malformed_lines, 0u);
}

TEST(LoadCapture, MalformedLinesAreCountedOrFatalInStrictMode) {
  std::string body;
  for (int i = 0; i < 9; ++i) body += "0." + std::to_string(i) + ",0316,1,00,R\n";
  body += "0.95,0316,8,00,R\n";
  {
    std::istringstream in(body);
    const auto cap = read_capture(in, CaptureFormat::CarHacking);
    EXPECT_EQ(cap.frames.size(), 9u);
    EXPECT_EQ(cap.meta.malformed_lines, 1u);
    EXPECT_EQ(cap.meta.total_lines, 10u);
    EXPECT_FALSE(cap.meta.first_error.empty());
  }
  std::istringstream in(body);
  EXPECT_THROW(read_capture(in, CaptureFormat::CarHacking, {.strict = true}), FormatError);
}

TEST(LoadCapture, BackwardsTimestampIsMalformed) {
  std::istringstream in("1.0,0316,0,R\n0.5,0316,0,R\n2.0,0316,0,R\n");
  const auto cap = read_capture(in, CaptureFormat::CarHacking);
  ASSERT_EQ(cap.frames.size(), 2u);
  EXPECT_EQ(cap.meta.malformed_lines, 1u);
}

TEST(LoadCapture, MissingFileIsIoError) {
  EXPECT_THROW(load_capture("/nonexistent/capture.log", CaptureFormat::Otids), IoError);
}

TEST(LoadCapture, NormalizedDumpRoundTrips) {
  const auto frames = synth_baseline(0.5, 4);
  std::stringstream buf;
  write_normalized_csv(buf, frames);
  const auto cap = read_capture(buf, CaptureFormat::Normalized, {.strict = true});
  EXPECT_EQ(cap.frames, frames);
  EXPECT_EQ(cap.meta.source, CaptureSource::Synthetic);
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_baseline(1.0, 7);
  const auto b = synth_baseline(1.0, 7);
  std::stringstream sa, sb;
  write_normalized_csv(sa, a);
  write_normalized_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(a, synth_baseline(1.0, 8));
}

TEST(Synth, RequestsAreAnsweredWithinFiveMilliseconds) {
  const auto frames = synth_baseline(5.0, 21);
  std::size_t remotes = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].kind != FrameKind::Remote) continue;
    ++remotes;
    bool answered = false;
    for (std::size_t j = i + 1; j < frames.size() && frames[j].timestamp <= frames[i].timestamp + 0.005; ++j)
      if (frames[j].kind == FrameKind::Data && frames[j].can_id == frames[i].can_id) answered = true;
    ASSERT_TRUE(answered) << "request at " << frames[i].timestamp;
  }
  EXPECT_GT(remotes, 100u);
}

TEST(Synth, BaselineShape) {
  const double duration = 3.0;
  const auto frames = synth_baseline(duration, 5);
  ASSERT_FALSE(frames.empty());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    ASSERT_EQ(check_frame(frames[i]), "");
    ASSERT_NE(frames[i].can_id, 0u);
    ASSERT_EQ(frames[i].label, FrameLabel::Normal);
    ASSERT_GE(frames[i].timestamp, 0.0);
    ASSERT_LT(frames[i].timestamp, duration + 0.01);
    if (i > 0) ASSERT_LE(frames[i - 1].timestamp, frames[i].timestamp);
  }
}

namespace {

// The non-injected frames of `out`, in order.
std::vector<CanFrame> originals(const std::vector<CanFrame>& out) {
  std::vector<CanFrame> kept;
  for (const auto& f : out)
    if (f.label != FrameLabel::Injected) kept.push_back(f);
  return kept;
}

}  // namespace

TEST(Inject, DosAddsOnlyHighPriorityZeroFrames) {
  const auto base = synth_baseline(1.0, 1);
  const auto out = inject_dos(base, 1000.0, 2);
  std::size_t injected = 0;
  for (const auto& f : out) {
    if (f.label != FrameLabel::Injected) continue;
    ++injected;
    EXPECT_EQ(f.can_id, 0u);
    EXPECT_EQ(f.dlc, 8);
    EXPECT_EQ(f.payload, std::vector<std::uint8_t>(8, 0));
    EXPECT_EQ(f.kind, FrameKind::Data);
  }
  EXPECT_EQ(originals(out), base);
  EXPECT_EQ(out.size(), base.size() + injected);
  // Poisson count over ~1 s at rate 1000: far inside +-5 sigma.
  EXPECT_NEAR(static_cast<double>(injected), 1000.0, 160.0);
  EXPECT_EQ(inject_dos(base, 1000.0, 2), out);
  EXPECT_THROW(inject_dos(base, 0.0, 2), ConfigError);
}

TEST(Inject, FuzzyIdsStayInRange) {
  const auto base = synth_baseline(1.0, 3);
  const IdSpace ids{0x100, 0x1ff};
  const auto out = inject_fuzzy(base, 500.0, ids, 9);
  std::size_t injected = 0;
  for (const auto& f : out) {
    if (f.label != FrameLabel::Injected) continue;
    ++injected;
    EXPECT_GE(f.can_id, ids.lo);
    EXPECT_LE(f.can_id, ids.hi);
    EXPECT_EQ(f.payload.size(), 8u);
  }
  EXPECT_GT(injected, 300u);
  EXPECT_EQ(originals(out), base);
  EXPECT_EQ(inject_fuzzy(base, 500.0, ids, 9), out);
}

TEST(Inject, RespectsTheInjectionWindow) {
  const auto base = synth_baseline(2.0, 3);
  const auto out = inject_dos(base, 2000.0, 4, {.start = 0.5, .end = 1.0});
  for (const auto& f : out) {
    if (f.label != FrameLabel::Injected) continue;
    EXPECT_GE(f.timestamp, 0.5);
    EXPECT_LT(f.timestamp, 1.0);
  }
}

TEST(Fuzz, GeneratedStreamsSatisfyFrameInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto base = synth_baseline(rng.uniform(0.05, 0.5), seed);
    auto out = inject_fuzzy(inject_dos(base, rng.uniform(10, 5000), seed + 1), rng.uniform(10, 5000), {}, seed + 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
      ASSERT_EQ(check_frame(out[i]), "") << "seed " << seed;
      if (i > 0) ASSERT_LE(out[i - 1].timestamp, out[i].timestamp);
    }
  }
}
