// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>

namespace srec::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Initialized from SREC_LOG (error|warn|info|debug); default warn.
inline Level& threshold_storage() {
  static Level level = [] {
    const char* env = std::getenv("SREC_LOG");
    if (env == nullptr) return Level::warn;
    const std::string_view v{env};
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline Level threshold() { return threshold_storage(); }
inline void set_threshold(Level level) { threshold_storage() = level; }

inline bool enabled(Level level) { return level <= threshold(); }

template <typename... Args>
void write(Level level, const Args&... args) {
  if (!enabled(level)) return;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::ostringstream oss;
  oss << "[srec " << names[static_cast<int>(level)] << "] ";
  (oss << ... << args);
  oss << '\n';
  std::cerr << oss.str();
}

template <typename... Args> void error(const Args&... args) { write(Level::error, args...); }
template <typename... Args> void warn(const Args&... args) { write(Level::warn, args...); }
template <typename... Args> void info(const Args&... args) { write(Level::info, args...); }
template <typename... Args> void debug(const Args&... args) { write(Level::debug, args...); }

}  // namespace srec::log
