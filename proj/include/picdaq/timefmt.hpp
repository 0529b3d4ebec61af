#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace picdaq {

/// Host timestamps carry millisecond resolution end to end.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

Timestamp now_ms();

/// `YYYY-MM-DDTHH:MM:SS.mmmZ` (UTC).
std::string format_iso8601(Timestamp ts);

/// Accepts the form produced by format_iso8601; the trailing `Z` is optional.
std::optional<Timestamp> parse_iso8601(std::string_view text);

}  // namespace picdaq
