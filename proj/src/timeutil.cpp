#include "mtnet/timeutil.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <ctime>
#include <string>

namespace mtnet {

namespace {

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

// Days from civil date (proleptic Gregorian), H. Hinnant's algorithm.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool valid_fields(int mon, int day, int h, int mi, int sec) {
  return mon >= 1 && mon <= 12 && day >= 1 && day <= 31 && h >= 0 && h <= 23 && mi >= 0 &&
         mi <= 59 && sec >= 0 && sec <= 60;
}

// "+hhmm", "+hh:mm", "Z"; returns offset seconds east of UTC.
bool parse_offset(std::string_view s, std::int64_t& out) {
  if (s.empty()) {
    out = 0;
    return true;
  }
  if (s == "Z" || s == "z") {
    out = 0;
    return true;
  }
  if (s[0] != '+' && s[0] != '-') return false;
  std::string compact;
  for (char c : s.substr(1))
    if (c != ':') compact += c;
  int hh = 0, mm = 0;
  if (compact.size() != 4 || !digits(compact, 0, 2, hh) || !digits(compact, 2, 2, mm)) return false;
  out = (s[0] == '-' ? -1 : 1) * static_cast<std::int64_t>(hh * 3600 + mm * 60);
  return true;
}

std::optional<std::int64_t> parse_iso(std::string_view s) {
  int y = 0, mon = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() < 19 || !digits(s, 0, 4, y) || s[4] != '-' || !digits(s, 5, 2, mon) ||
      s[7] != '-' || !digits(s, 8, 2, d) || (s[10] != 'T' && s[10] != ' ') ||
      !digits(s, 11, 2, h) || s[13] != ':' || !digits(s, 14, 2, mi) || s[16] != ':' ||
      !digits(s, 17, 2, sec)) {
    return std::nullopt;
  }
  if (!valid_fields(mon, d, h, mi, sec)) return std::nullopt;
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  }
  std::int64_t offset = 0;
  if (!parse_offset(s.substr(pos), offset)) return std::nullopt;
  return days_from_civil(y, static_cast<unsigned>(mon), static_cast<unsigned>(d)) * kSecondsPerDay +
         h * 3600 + mi * 60 + sec - offset;
}

std::optional<std::int64_t> parse_ctime(std::string_view s) {
  // Www Mmm dd hh:mm:ss +zzzz yyyy
  static constexpr std::array<const char*, 12> kMonths = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  std::array<std::string_view, 6> parts;
  std::size_t n = 0, pos = 0;
  while (pos < s.size() && n < parts.size()) {
    while (pos < s.size() && s[pos] == ' ') ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] != ' ') ++pos;
    if (pos > start) parts[n++] = s.substr(start, pos - start);
  }
  while (pos < s.size() && s[pos] == ' ') ++pos;
  if (n != 6 || pos != s.size()) return std::nullopt;
  int mon = 0;
  for (int i = 0; i < 12; ++i)
    if (parts[1] == kMonths[i]) mon = i + 1;
  int d = 0, h = 0, mi = 0, sec = 0, y = 0;
  const auto& clock = parts[3];
  std::int64_t day64 = 0, y64 = 0, offset = 0;
  if (!parse_int(parts[2], day64) || clock.size() != 8 || !digits(clock, 0, 2, h) ||
      clock[2] != ':' || !digits(clock, 3, 2, mi) || clock[5] != ':' || !digits(clock, 6, 2, sec) ||
      !parse_offset(parts[4], offset) || !parse_int(parts[5], y64)) {
    return std::nullopt;
  }
  d = static_cast<int>(day64);
  y = static_cast<int>(y64);
  if (!valid_fields(mon, d, h, mi, sec)) return std::nullopt;
  return days_from_civil(y, static_cast<unsigned>(mon), static_cast<unsigned>(d)) * kSecondsPerDay +
         h * 3600 + mi * 60 + sec - offset;
}

}  // namespace

std::optional<std::int64_t> parse_timestamp(std::string_view text, TimeFormat format) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  switch (format) {
    case TimeFormat::Epoch: {
      std::int64_t v = 0;
      if (!parse_int(text, v)) return std::nullopt;
      return v;
    }
    case TimeFormat::Iso8601:
      return parse_iso(text);
    case TimeFormat::Ctime:
      return parse_ctime(text);
  }
  return std::nullopt;
}

}  // namespace mtnet
