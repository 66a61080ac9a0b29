#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace nmrom::log {

enum class Level { debug = 0, info = 1, warn = 2, quiet = 3 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::warn};
  return level;
}

inline void set_level(Level l) { threshold() = l; }

inline void write(Level l, std::string_view tag, std::string_view msg) {
  if (l < threshold().load()) return;
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  std::cerr << '[' << tag << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::debug, "debug", msg); }
inline void info(std::string_view msg) { write(Level::info, "info", msg); }
inline void warn(std::string_view msg) { write(Level::warn, "warn", msg); }

}  // namespace nmrom::log
