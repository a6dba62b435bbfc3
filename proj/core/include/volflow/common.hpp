#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace volflow {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Error taxonomy shared by the library and the CLI (which maps kinds to
// exit codes: usage 2, data 3, numeric 4, io 5).
enum class ErrorKind { Usage, Shape, Value, Parse, Vocabulary, Data, Numeric, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_shape(const std::string& msg) { throw Error(ErrorKind::Shape, msg); }
[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrorKind::Usage, msg); }
[[noreturn]] inline void throw_value(const std::string& msg) { throw Error(ErrorKind::Value, msg); }
[[noreturn]] inline void throw_parse(const std::string& msg) { throw Error(ErrorKind::Parse, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::Data, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorKind::Numeric, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorKind::Io, msg); }

// Fixed-point formatting used everywhere a file must be byte-stable.
std::string fmt_double(double v, int precision);

}  // namespace volflow
