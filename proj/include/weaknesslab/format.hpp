#pragma once

#include <charconv>
#include <cstdio>
#include <string>

namespace weaknesslab {

// Shortest round-trip decimal rendering. std::to_chars for doubles is fully
// specified, so the same value always prints as the same bytes; all CSV and
// JSON output goes through here to keep experiment artifacts byte-stable.
inline std::string fmt_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline std::string fmt_index(int i, int width = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d", width, i);
  return std::string(buf);
}

}  // namespace weaknesslab
