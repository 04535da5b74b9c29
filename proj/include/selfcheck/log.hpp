// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace selfcheck::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}
}  // namespace detail

/// Replaces the warning sink and returns the previous one.
inline Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(detail::sink_mutex());
  std::swap(detail::sink(), sink);
  return sink;
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::sink_mutex());
  if (detail::sink()) detail::sink()(msg);
}

}  // namespace selfcheck::log
