#pragma once

#include <charconv>
#include <string>

namespace imaml::detail {

// Shortest decimal form that round-trips; identical across runs and
// platforms with a conforming to_chars.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace imaml::detail
