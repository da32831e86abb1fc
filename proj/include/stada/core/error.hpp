#pragma once

#include <stdexcept>
#include <string>

namespace stada {

/// Base class for every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller violated a documented precondition (shape mismatch, bad range...).
/// These map to exit code 2 in the CLI: they indicate a bug, not bad user input.
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& msg) : Error(msg) {}
};

/// User-facing input problems: missing files, malformed configs, bad flags.
class UserError : public Error {
 public:
  explicit UserError(const std::string& msg) : Error(msg) {}
};

class IoError : public UserError {
 public:
  explicit IoError(const std::string& msg) : UserError(msg) {}
};

/// Serialized artifact carries an unknown format version.
class VersionError : public UserError {
 public:
  explicit VersionError(const std::string& msg) : UserError(msg) {}
};

/// Serialized artifact is truncated or fails its content hash.
class CorruptFileError : public UserError {
 public:
  explicit CorruptFileError(const std::string& msg) : UserError(msg) {}
};

/// An optimization produced a non-finite loss and was aborted.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace stada
