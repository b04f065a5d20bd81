// SPDX-License-Identifier: Apache-2.0
// Slow, direct recomputation of window features used as a reference in tests.
// Deliberately shares no code with the extractor beyond the frame type.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rxads/can_io.hpp"

namespace rxads::oracle {

struct OracleWindow {
  double start = 0.0;
  std::vector<std::size_t> members;  // indices into the frame sequence
  std::map<std::string, double> values;
  bool attack = false;
};

/// Every window of the stream, with features keyed by column name. Columns
/// for `baseline_ids` (and payload bytes 0..7 of those IDs, when asked) are
/// always present, so callers pick the ones their schema uses.
std::vector<OracleWindow> oracle_windows(const std::vector<can::CanFrame>& frames, double win_size,
                                         const std::set<std::uint32_t>& baseline_ids, bool include_payload);

}  // namespace rxads::oracle
