// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/error.hpp"

namespace sa2net {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kTraining: return "training error";
  }
  return "error";
}

}  // namespace sa2net
