#pragma once

#include <cstdio>
#include <string>

namespace dropkit {

// All emitted CSV floats use 6 significant digits.
inline std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace dropkit
