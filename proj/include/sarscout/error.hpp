#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sarscout {

/// Failure categories shared by every module. The HTTP gateway maps these
/// onto status codes and publishes the name in error bodies.
enum class ErrorKind {
  invalid_argument,
  input,
  backend,
  decode,
  parse,
  not_found,
  validation,
  integrity,
  timeout,
  request,
  protocol,
  transport,
  upstream,
  unsupported_format,
  oversize,
  limit,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::input: return "input";
    case ErrorKind::backend: return "backend";
    case ErrorKind::decode: return "decode";
    case ErrorKind::parse: return "parse";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::validation: return "validation";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::timeout: return "timeout";
    case ErrorKind::request: return "request";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::transport: return "transport";
    case ErrorKind::upstream: return "upstream";
    case ErrorKind::unsupported_format: return "unsupported_format";
    case ErrorKind::oversize: return "oversize";
    case ErrorKind::limit: return "limit";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] std::string_view kind_name() const noexcept { return to_string(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace sarscout
