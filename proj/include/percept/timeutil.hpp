#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace percept {

/// Milliseconds since the Unix epoch, UTC.
using TimestampMs = std::int64_t;

/// "2021-03-04T05:06:07.089Z"
std::string format_iso8601(TimestampMs ts);
/// Accepts the format written by format_iso8601, with or without milliseconds.
TimestampMs parse_iso8601(std::string_view text);

using Clock = std::function<TimestampMs()>;
TimestampMs system_now_ms();

}  // namespace percept
