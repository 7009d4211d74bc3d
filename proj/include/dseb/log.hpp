#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace dseb {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Level comes from DSEB_LOG (error|info|debug); default info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DSEB_LOG");
    if (!env) return LogLevel::info;
    const std::string v(env);
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_error(const std::string& msg) {
  std::cerr << "[error] " << msg << '\n';
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[info] " << msg << '\n';
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << "[debug] " << msg << '\n';
}

}  // namespace dseb
