#pragma once

#include <cstdio>
#include <string>

namespace pdintent::detail {

/// Shortest "%.10g" rendering used by every CSV writer.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace pdintent::detail
