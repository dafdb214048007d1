#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace seldiff {

/// Coarse failure category. The CLI maps each one to a distinct exit status
/// and prints it as a machine-parsable prefix.
enum class ErrorKind {
  kShape = 1,
  kRange,
  kNumeric,
  kData,
  kConfig,
  kIo,
  kMismatch,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kData: return "data";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kMismatch: return "mismatch";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(ErrorKind kind, Args&&... args) {
  throw Error(kind, detail::concat(std::forward<Args>(args)...));
}

}  // namespace seldiff
