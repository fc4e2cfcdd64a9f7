#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace pdm::log {

enum class Level { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

/// Verbosity from PDM_LOG (quiet|error|warn|info|debug); warn when unset.
inline Level level_from_env() {
  const char* v = std::getenv("PDM_LOG");
  if (!v) return Level::Warn;
  const std::string_view s(v);
  if (s == "quiet" || s == "off") return Level::Quiet;
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}

inline Level& threshold() {
  static Level level = level_from_env();
  return level;
}

inline void write(Level l, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(l) <= static_cast<int>(threshold())) std::cerr << "[pdm " << tag << "] " << msg << '\n';
}

inline void error(std::string_view m) { write(Level::Error, "error", m); }
inline void warn(std::string_view m) { write(Level::Warn, "warn", m); }
inline void info(std::string_view m) { write(Level::Info, "info", m); }
inline void debug(std::string_view m) { write(Level::Debug, "debug", m); }

}  // namespace pdm::log
