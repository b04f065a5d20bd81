// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rxads::text {

/// Shortest decimal text that parses back to the same double.
std::string format_real(double value);

/// Finite decimal real; nullopt on anything else (including nan/inf).
std::optional<double> parse_real(std::string_view s);

std::optional<std::uint64_t> parse_hex(std::string_view s, std::size_t max_digits = 16);
std::optional<std::int64_t> parse_int(std::string_view s);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
std::vector<std::string_view> split_whitespace(std::string_view s);

}  // namespace rxads::text
