// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace vala {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is outside its valid range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrc {
  bad_magic,
  truncated,
  extent_overflow,
  io_failure,
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::truncated: return "truncated payload";
    case FormatErrc::extent_overflow: return "extent overflow";
    case FormatErrc::io_failure: return "i/o failure";
  }
  return "unknown";
}

/// Malformed or unreadable tensor/checkpoint file.
class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

}  // namespace vala
