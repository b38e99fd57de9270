#pragma once

#include <sstream>
#include <string>

namespace storyanchor::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2 };

/// Threshold read once from STORYANCHOR_LOG (debug|info|warn); default info.
Level threshold();
void set_threshold(Level level);
void write(Level level, const std::string& message);

template <typename... Args>
void emit(Level level, const Args&... args) {
  if (level < threshold()) {
    return;
  }
  std::ostringstream out;
  (out << ... << args);
  write(level, out.str());
}

template <typename... Args>
void debug(const Args&... args) { emit(Level::kDebug, args...); }
template <typename... Args>
void info(const Args&... args) { emit(Level::kInfo, args...); }
template <typename... Args>
void warn(const Args&... args) { emit(Level::kWarn, args...); }

}  // namespace storyanchor::log
