#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "pdm/core/error.hpp"

namespace pdm {

using TimePoint = std::chrono::sys_seconds;
using Minutes = std::chrono::minutes;
using Seconds = std::chrono::seconds;

namespace detail {

inline bool parse_int(std::string_view s, int& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses `YYYY-MM-DDTHH:MM[:SS][Z]` (a space is accepted in place of `T`).
/// Offsets other than Z are rejected; all timestamps are UTC.
inline TimePoint parse_iso8601(std::string_view text) {
  auto fail = [&] {
    return Error(ErrorKind::Schema, "bad timestamp '" + std::string(text) + "'");
  };
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  if (text.size() != 16 && text.size() != 19) throw fail();
  if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':')
    throw fail();
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (!detail::parse_int(text.substr(0, 4), y) || !detail::parse_int(text.substr(5, 2), mo) ||
      !detail::parse_int(text.substr(8, 2), d) || !detail::parse_int(text.substr(11, 2), h) ||
      !detail::parse_int(text.substr(14, 2), mi))
    throw fail();
  if (text.size() == 19 && (text[16] != ':' || !detail::parse_int(text.substr(17, 2), s)))
    throw fail();
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw fail();
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} +
         std::chrono::seconds{s};
}

inline std::string format_iso8601(TimePoint t) {
  const auto days = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd{days};
  const std::chrono::hh_mm_ss hms{t - days};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

}  // namespace pdm
