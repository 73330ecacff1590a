#pragma once

// Structured key=value log lines on standard error.

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace dfp::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::info};
  return level;
}

inline void set_level(Level l) { threshold() = l; }

inline const char* name(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    case Level::off: return "off";
  }
  return "?";
}

namespace detail {
inline void append(std::ostringstream&) {}

template <typename K, typename V, typename... Rest>
void append(std::ostringstream& os, K&& key, V&& value, Rest&&... rest) {
  os << ' ' << key << '=' << value;
  append(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

// emit(Level::info, "iteration", "iter", 3, "loss", 0.1)
//   -> "level=info event=iteration iter=3 loss=0.1"
template <typename... KV>
void emit(Level l, std::string_view event, KV&&... kv) {
  static_assert(sizeof...(KV) % 2 == 0, "log fields come in key/value pairs");
  if (l < threshold().load()) return;
  std::ostringstream os;
  os.precision(8);
  os << "level=" << name(l) << " event=" << event;
  detail::append(os, std::forward<KV>(kv)...);
  os << '\n';
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << os.str();
}

}  // namespace dfp::log
