// SPDX-License-Identifier: Apache-2.0
#include "rxads/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <functional>

#include "rxads/error.hpp"
#include "rxads/random.hpp"

namespace rxads::can {

namespace {

struct Pending {
  CanFrame frame;
  std::size_t order;  // generation order, breaks timestamp ties
};

std::vector<std::uint8_t> random_bytes(Rng& rng, int n) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n));
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.below(256));
  return out;
}

void validate_config(const SynthConfig& c) {
  if (c.data_ids.size() != c.periods.size() || c.data_ids.size() != c.dlcs.size())
    throw ConfigError("synth: data_ids, periods and dlcs must have equal length");
  for (double p : c.periods)
    if (!(p > 0.0)) throw ConfigError("synth: periods must be positive");
  for (int d : c.dlcs)
    if (d < 0 || d > kMaxDlc) throw ConfigError("synth: dlc out of range");
  for (auto id : c.data_ids)
    if (id == 0 || id > kMaxCanId) throw ConfigError("synth: data ids must be in (0, 0x1FFFFFFF]");
  for (auto id : c.remote_ids) {
    if (id == 0 || id > kMaxCanId) throw ConfigError("synth: remote ids must be in (0, 0x1FFFFFFF]");
    if (std::find(c.data_ids.begin(), c.data_ids.end(), id) != c.data_ids.end())
      throw ConfigError("synth: remote ids must not overlap periodic data ids");
  }
  if (!c.remote_ids.empty() && !(c.remote_period > c.max_response_delay))
    throw ConfigError("synth: remote_period must exceed max_response_delay");
  if (c.remote_dlc < 0 || c.remote_dlc > kMaxDlc) throw ConfigError("synth: remote_dlc out of range");
  if (!(c.instant_delay_min > 0.0) || c.instant_delay_min > c.instant_delay_max ||
      c.instant_delay_max > c.max_response_delay)
    throw ConfigError("synth: need 0 < instant_delay_min <= instant_delay_max <= max_response_delay");
  if (c.period_jitter < 0.0 || c.period_jitter >= 1.0) throw ConfigError("synth: period_jitter in [0, 1)");
}

std::vector<CanFrame> merge_injected(std::span<const CanFrame> frames, std::vector<CanFrame> injected) {
  std::vector<CanFrame> out;
  out.reserve(frames.size() + injected.size());
  // std::merge is stable: originals precede injected frames with equal timestamps.
  std::merge(frames.begin(), frames.end(), injected.begin(), injected.end(), std::back_inserter(out),
             [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::vector<double> poisson_times(std::span<const CanFrame> frames, double rate, Rng& rng,
                                  const InjectionWindow& window) {
  if (!(rate > 0.0)) throw ConfigError(fmt::format("injection rate must be > 0 (got {})", rate));
  std::vector<double> times;
  if (frames.empty() && !(window.start && window.end)) return times;
  const double start = window.start.value_or(frames.empty() ? 0.0 : frames.front().timestamp);
  const double end = window.end.value_or(frames.empty() ? 0.0 : frames.back().timestamp);
  for (double t = start + rng.exponential(rate); t < end; t += rng.exponential(rate)) times.push_back(t);
  return times;
}

}  // namespace

std::vector<CanFrame> synth_baseline(double duration, std::uint64_t seed, const SynthConfig& config) {
  if (!(duration > 0.0)) throw ConfigError("synth: duration must be > 0");
  validate_config(config);

  Rng rng(seed);
  std::vector<Pending> pending;
  std::size_t order = 0;
  auto emit = [&](CanFrame f) { pending.push_back({std::move(f), order++}); };

  for (std::size_t k = 0; k < config.data_ids.size(); ++k) {
    const double period = config.periods[k];
    std::uint8_t counter = static_cast<std::uint8_t>(rng.below(256));
    for (double t = rng.uniform(0.0, period); t < duration;
         t += period * (1.0 + config.period_jitter * rng.uniform(-1.0, 1.0))) {
      auto payload = random_bytes(rng, config.dlcs[k]);
      if (!payload.empty()) payload[0] = counter++;
      emit(make_frame(t, config.data_ids[k], FrameKind::Data, config.dlcs[k], std::move(payload),
                      FrameLabel::Normal));
    }
  }

  for (auto id : config.remote_ids) {
    for (double t = rng.uniform(0.0, config.remote_period); t < duration;
         t += config.remote_period * (1.0 + config.period_jitter * rng.uniform(-1.0, 1.0))) {
      const double delay = rng.uniform() < config.instant_reply_probability
                               ? rng.uniform(config.instant_delay_min, config.instant_delay_max)
                               : rng.uniform(config.instant_delay_max, config.max_response_delay);
      if (t + delay >= duration) break;
      emit(make_frame(t, id, FrameKind::Remote, config.remote_dlc, {}, FrameLabel::Normal));
      emit(make_frame(t + delay, id, FrameKind::Data, config.remote_dlc, random_bytes(rng, config.remote_dlc),
                      FrameLabel::Normal));
    }
  }

  std::sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    return a.frame.timestamp != b.frame.timestamp ? a.frame.timestamp < b.frame.timestamp : a.order < b.order;
  });
  std::vector<CanFrame> out;
  out.reserve(pending.size());
  for (auto& p : pending) out.push_back(std::move(p.frame));
  return out;
}

std::vector<CanFrame> inject_dos(std::span<const CanFrame> frames, double rate, std::uint64_t seed,
                                 const InjectionWindow& window) {
  Rng rng(seed);
  std::vector<CanFrame> injected;
  for (double t : poisson_times(frames, rate, rng, window))
    injected.push_back(make_frame(t, 0x000, FrameKind::Data, 8, std::vector<std::uint8_t>(8, 0),
                                  FrameLabel::Injected));
  return merge_injected(frames, std::move(injected));
}

std::vector<CanFrame> inject_fuzzy(std::span<const CanFrame> frames, double rate, const IdSpace& ids,
                                   std::uint64_t seed, const InjectionWindow& window) {
  if (ids.lo > ids.hi || ids.hi > kMaxCanId) throw ConfigError("fuzzy: invalid id space");
  Rng rng(seed);
  std::vector<CanFrame> injected;
  for (double t : poisson_times(frames, rate, rng, window)) {
    const auto id = static_cast<std::uint32_t>(ids.lo + rng.below(std::uint64_t{ids.hi} - ids.lo + 1));
    injected.push_back(make_frame(t, id, FrameKind::Data, 8, random_bytes(rng, 8), FrameLabel::Injected));
  }
  return merge_injected(frames, std::move(injected));
}

}  // namespace rxads::can
