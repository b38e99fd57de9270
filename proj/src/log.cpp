#include "storyanchor/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace storyanchor::log {
namespace {

Level level_from_env() {
  const char* raw = std::getenv("STORYANCHOR_LOG");
  if (raw == nullptr) {
    return Level::kInfo;
  }
  const std::string_view value(raw);
  if (value == "debug") return Level::kDebug;
  if (value == "warn") return Level::kWarn;
  return Level::kInfo;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{level_from_env()};
  return level;
}

std::mutex& sink_mutex() {
  static std::mutex mutex;
  return mutex;
}

}  // namespace

Level threshold() { return current().load(); }

void set_threshold(Level level) { current().store(level); }

void write(Level level, const std::string& message) {
  static constexpr std::string_view kNames[] = {"debug", "info", "warn"};
  std::lock_guard lock(sink_mutex());
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace storyanchor::log
