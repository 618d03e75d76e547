#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdl {

// Thrown for contract violations (bad shapes, bad labels, malformed files).
// CLI maps these to exit code 2 when they stem from user configuration and
// exit code 1 when a runtime check fails.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

#define HDL_CHECK(cond, ...)                                \
  do {                                                      \
    if (!(cond)) throw ::hdl::Error(::hdl::format_msg(__VA_ARGS__)); \
  } while (0)

}  // namespace hdl
