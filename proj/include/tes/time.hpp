#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace tes {

using Clock = std::chrono::system_clock;
/// Task timestamps carry microsecond precision so that the textual form
/// round-trips exactly.
using Timestamp = std::chrono::time_point<Clock, std::chrono::microseconds>;

Timestamp now_utc();

/// RFC 3339 UTC text, e.g. "2024-03-01T12:00:00.000125Z".
std::string format_rfc3339(Timestamp t);

/// Accepts "Z" or numeric offsets and an optional fractional part.
std::optional<Timestamp> parse_rfc3339(std::string_view text);

inline std::int64_t to_micros(Timestamp t) { return t.time_since_epoch().count(); }
inline Timestamp from_micros(std::int64_t us) {
  return Timestamp{std::chrono::microseconds{us}};
}

}  // namespace tes
