#pragma once

#include <charconv>
#include <string>

namespace weakmil {

// Locale-independent shortest-form %g with the given significant digits.
inline std::string format_double(double v, int significant = 9) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, significant);
  return std::string(buf, ptr);
}

// Shortest representation that parses back to exactly `v`.
inline std::string format_exact(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace weakmil
