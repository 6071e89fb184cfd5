#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <string_view>

namespace evalroom {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Source of "now". Injected everywhere a timestamp is recorded so exports
/// can be reproduced byte-for-byte under a fake clock.
using Clock = std::function<Timestamp()>;

Clock system_clock();

/// A clock that starts at `start` and advances by `step` on every read.
Clock stepping_clock(Timestamp start, std::chrono::milliseconds step);

/// RFC 3339, UTC, millisecond precision: 2024-05-01T12:00:00.000Z
std::string format_rfc3339(Timestamp t);

/// Inverse of format_rfc3339. Accepts an optional fraction of 1-3 digits and
/// only the `Z` offset; throws std::invalid_argument otherwise.
Timestamp parse_rfc3339(std::string_view text);

} // namespace evalroom
