#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvp {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, task or command configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is well-formed but semantically unusable (too few classes,
/// non-finite values, dangling ids, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Input violates a numeric precondition, e.g. a zero-norm row.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Binary file does not follow its layout. Carries the byte offset at which
/// the problem was detected.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Filesystem failure (missing file, unwritable path).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvp
