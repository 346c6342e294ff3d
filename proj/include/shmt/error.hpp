#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shmt {

enum class ErrorKind {
  kValidation,
  kNotFound,
  kUntrained,
  kNumeric,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Single exception type carried across module boundaries. The CLI maps it to
// a one-line "error: <kind>: <message>" and the service to HTTP statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::kValidation, message);
}

}  // namespace shmt
