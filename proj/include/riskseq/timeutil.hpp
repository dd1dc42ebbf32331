#ifndef RISKSEQ_TIMEUTIL_HPP
#define RISKSEQ_TIMEUTIL_HPP

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>

#include "riskseq/error.hpp"

namespace riskseq {

using TimePoint = std::chrono::sys_seconds;

namespace detail {

// Howard Hinnant's civil-date algorithms.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  return a / b - ((a % b != 0) && ((a < 0) != (b < 0)));
}

}  // namespace detail

/// Parses "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" or the same with a trailing 'Z' (UTC).
inline TimePoint parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail[4] = {0};
  int n = std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%3s", &y, &mo, &d, &h, &mi, &s, tail);
  const bool date_only = n == 3 && text.size() == 10;
  const bool full = n == 6 || (n == 7 && std::string(tail) == "Z");
  if (!(date_only || full) || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) {
    throw DataError("invalid ISO-8601 timestamp '" + text + "'");
  }
  const std::int64_t days = detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return TimePoint(std::chrono::seconds(days * 86400 + h * 3600 + mi * 60 + s));
}

inline std::string format_iso8601(TimePoint tp) {
  const std::int64_t secs = tp.time_since_epoch().count();
  const std::int64_t days = detail::floor_div(secs, 86400);
  const std::int64_t rem = secs - days * 86400;
  const detail::Civil c = detail::civil_from_days(days);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld", static_cast<long long>(c.year), c.month,
                c.day, static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

/// Day of week, Monday = 0 .. Sunday = 6.
inline int weekday_index(TimePoint tp) {
  const std::int64_t days = detail::floor_div(tp.time_since_epoch().count(), 86400);
  // 1970-01-01 was a Thursday.
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

/// Month, January = 0 .. December = 11.
inline int month_index(TimePoint tp) {
  const std::int64_t days = detail::floor_div(tp.time_since_epoch().count(), 86400);
  return static_cast<int>(detail::civil_from_days(days).month) - 1;
}

}  // namespace riskseq

#endif  // RISKSEQ_TIMEUTIL_HPP
