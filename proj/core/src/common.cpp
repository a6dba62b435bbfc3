#include "volflow/common.hpp"

#include <cstdio>

namespace volflow {

std::string fmt_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace volflow
