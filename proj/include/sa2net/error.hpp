// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sa2net {

/// Broad failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kConfig,    // invalid configuration or arguments
  kShape,     // tensor rank/size contract violated
  kData,      // malformed dataset, labels out of range, missing files
  kIo,        // filesystem / codec failure
  kTraining,  // numerical blow-up during optimisation
};

std::string_view to_string(ErrorKind kind);

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

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) {
    throw Error(kind, message);
  }
}

}  // namespace sa2net
