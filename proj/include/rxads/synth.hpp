// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rxads/can_io.hpp"

namespace rxads::can {

/// Shape of the synthetic baseline bus. Defaults: ten periodic data IDs with
/// periods between 1 and 20 ms, plus three remote-request responders that
/// answer within 5 ms.
struct SynthConfig {
  std::vector<std::uint32_t> data_ids{0x0a0, 0x0b0, 0x110, 0x130, 0x260, 0x2a0, 0x316, 0x329, 0x43f, 0x545};
  std::vector<double> periods{0.001, 0.002, 0.003, 0.005, 0.007, 0.010, 0.012, 0.015, 0.018, 0.020};
  std::vector<int> dlcs{8, 8, 8, 6, 8, 4, 8, 8, 2, 8};
  double period_jitter = 0.05;  // relative, uniform in [-j, +j]

  std::vector<std::uint32_t> remote_ids{0x100, 0x200, 0x350};
  double remote_period = 0.010;
  int remote_dlc = 8;
  double instant_reply_probability = 0.6;
  double instant_delay_min = 0.00002;
  double instant_delay_max = 0.0001;
  double max_response_delay = 0.005;
};

/// Deterministic per (duration, seed, config); every frame is labelled
/// Normal and the highest-priority ID 0x000 never appears.
std::vector<CanFrame> synth_baseline(double duration, std::uint64_t seed, const SynthConfig& config = {});

/// Time range for injections, [start, end). Defaults to the span of the input.
struct InjectionWindow {
  std::optional<double> start;
  std::optional<double> end;
};

struct IdSpace {
  std::uint32_t lo = 0x000;
  std::uint32_t hi = 0x7ff;
};

/// Inserts zero-payload data frames with ID 0x000 at Poisson-spaced times.
/// Existing frames keep their content and relative order.
std::vector<CanFrame> inject_dos(std::span<const CanFrame> frames, double rate, std::uint64_t seed,
                                 const InjectionWindow& window = {});

/// Inserts data frames with uniformly random IDs from `ids` and random
/// 8-byte payloads at Poisson-spaced times.
std::vector<CanFrame> inject_fuzzy(std::span<const CanFrame> frames, double rate, const IdSpace& ids,
                                   std::uint64_t seed, const InjectionWindow& window = {});

}  // namespace rxads::can
