// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

namespace sa2net {

/// Weights of the three combination losses for two prediction maps.
struct LossWeights {
  double alpha = 1.0;  // mixed map p1 + p2
  double beta = 0.4;   // p1 (structure-aware path)
  double gamma = 0.5;  // p2 (channel-spatial attention path)

  void validate() const;
};

/// Mean over labelled pixels of -log softmax(logits)[target].
/// logits (B, N, H, W), target (B, H, W) integer labels in [0, N).
/// Pixels equal to `ignore_index` (when >= 0) are excluded.
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& target,
                            int64_t ignore_index = -1);

/// Sum over all non-empty subsets S of the k maps of
///   weights[mask(S) - 1] * CE(sum_{i in S} maps[i], target)
/// where bit i of mask(S) marks map i. `weights` has 2^k - 1 entries.
torch::Tensor feature_mixing_loss(std::span<const torch::Tensor> maps, std::span<const double> weights,
                                  const torch::Tensor& target, int64_t ignore_index = -1);

/// k = 2 case: alpha * CE(p1 + p2) + beta * CE(p1) + gamma * CE(p2).
torch::Tensor mixing_loss(const torch::Tensor& p1, const torch::Tensor& p2, const torch::Tensor& target,
                          const LossWeights& weights = {}, int64_t ignore_index = -1);

}  // namespace sa2net
