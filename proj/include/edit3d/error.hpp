#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace edit3d {

enum class ErrorKind {
  InvalidInput,
  InvalidConfig,
  ContractViolation,
  BehindCamera,
  EmptySelection,
  Degenerate,
  EditOutOfFrame,
  InsufficientCorrespondences,
  SolverFailure,
  Diverged,
  CapabilityMissing,
  OracleTimeout,
  OracleTransport,
  OracleRequest,
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  [[nodiscard]] bool is_oracle_error() const noexcept {
    return kind_ == ErrorKind::CapabilityMissing || kind_ == ErrorKind::OracleTimeout ||
           kind_ == ErrorKind::OracleTransport || kind_ == ErrorKind::OracleRequest;
  }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string &message) {
  if (!condition) {
    throw Error(kind, message);
  }
}

} // namespace edit3d
