#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace mtnet {

enum class TimeFormat {
  Iso8601,  // 2012-04-12T10:05:00Z, optional +hh:mm offset, space separator allowed
  Epoch,    // integer seconds
  Ctime,    // Foursquare dump style: "Tue Apr 03 18:00:09 +0000 2012"
};

// Parses to UTC epoch seconds; nullopt when the text is not a valid time.
std::optional<std::int64_t> parse_timestamp(std::string_view text, TimeFormat format);

constexpr std::int64_t kSecondsPerDay = 86400;

// Local time is UTC shifted by tz_offset_seconds.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)) ? 1 : 0);
}

constexpr std::int64_t day_key(std::int64_t ts, std::int64_t tz_offset_seconds = 0) {
  return floor_div(ts + tz_offset_seconds, kSecondsPerDay);
}

constexpr std::int64_t seconds_into_day(std::int64_t ts, std::int64_t tz_offset_seconds = 0) {
  return ts + tz_offset_seconds - day_key(ts, tz_offset_seconds) * kSecondsPerDay;
}

constexpr int hour_of_day(std::int64_t ts, std::int64_t tz_offset_seconds = 0) {
  return static_cast<int>(seconds_into_day(ts, tz_offset_seconds) / 3600);
}

// 0 = Monday ... 6 = Sunday. Day 0 (1970-01-01) was a Thursday.
constexpr int day_of_week(std::int64_t day) { return static_cast<int>(((day % 7) + 7 + 3) % 7); }

}  // namespace mtnet
