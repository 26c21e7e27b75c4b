// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dysco {

enum class ErrorKind {
  kDimension,   // shapes or lengths disagree
  kNonFinite,   // NaN/Inf produced or consumed
  kFormat,      // malformed file, bad magic/version, checksum failure
  kValidation,  // violated precondition or invariant of a domain type
  kCapacity,    // cache or sequence length exceeded
  kIo,          // filesystem errors
};

const char* to_string(ErrorKind kind);

/// Every library failure surfaces as an `Error`; `kind()` lets callers (the CLI
/// in particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace dysco
