// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sa2net {

enum class GradcheckComponent { kGca, kSca, kSacsam, kDecoderBlock, kAffinity, kFull };

GradcheckComponent parse_gradcheck_component(std::string_view name);
std::string_view to_string(GradcheckComponent component);
const std::vector<GradcheckComponent>& all_gradcheck_components();

struct GradcheckOptions {
  double step = 1e-5;       // central-difference step
  double tolerance = 1e-4;  // on the relative error
  /// Denominator floor: |a - n| / max(|a|, |n|, floor). Keeps entries with
  /// vanishing gradient from dividing round-off by ~0.
  double floor = 1e-3;
  /// Entries probed per tensor; larger tensors are subsampled.
  int64_t max_entries_per_tensor = 16;
};

struct GradcheckReport {
  std::string component;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_tensor;
  int64_t entries = 0;
  double seconds = 0.0;
  bool passed = false;

  std::string to_text() const;
};

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Compares autograd gradients of `loss()` with respect to each float64 leaf
/// in `inputs` against central differences.
GradcheckReport check_gradients(const std::function<torch::Tensor()>& loss, const NamedTensors& inputs,
                                uint64_t seed, const GradcheckOptions& options = {});

/// Builds a small float64 instance of the component with seeded weights and
/// a random linear functional of its outputs as the loss.
GradcheckReport gradcheck(GradcheckComponent component, uint64_t seed, const GradcheckOptions& options = {});

}  // namespace sa2net
