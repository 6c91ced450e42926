// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/losses.hpp"

#include <sstream>

#include "sa2net/error.hpp"

namespace sa2net {

void LossWeights::validate() const {
  require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, ErrorKind::kConfig,
          "loss weights must be non-negative");
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& target, int64_t ignore_index) {
  require(logits.dim() == 4, ErrorKind::kShape, "cross_entropy: logits must be (B, N, H, W)");
  require(target.dim() == 3 && target.size(0) == logits.size(0) && target.size(1) == logits.size(2) &&
              target.size(2) == logits.size(3),
          ErrorKind::kShape, "cross_entropy: target must be (B, H, W) matching the logits");
  const auto classes = logits.size(1);
  auto labels = target.to(torch::kLong);
  auto valid = ignore_index >= 0 ? labels.ne(ignore_index) : torch::ones_like(labels, torch::kBool);
  {
    auto checked = labels.masked_select(valid);
    if (checked.numel() > 0) {
      const auto lo = checked.min().item<int64_t>();
      const auto hi = checked.max().item<int64_t>();
      if (lo < 0 || hi >= classes) {
        std::ostringstream msg;
        msg << "cross_entropy: label " << (lo < 0 ? lo : hi) << " outside [0, " << classes << ")";
        fail(ErrorKind::kData, msg.str());
      }
    }
  }
  auto safe = labels.masked_fill(valid.logical_not(), 0);
  auto picked = torch::log_softmax(logits, 1).gather(1, safe.unsqueeze(1)).squeeze(1);
  auto weights = valid.to(logits.scalar_type());
  return -(picked * weights).sum() / weights.sum().clamp_min(1.0);
}

torch::Tensor feature_mixing_loss(std::span<const torch::Tensor> maps, std::span<const double> weights,
                                  const torch::Tensor& target, int64_t ignore_index) {
  require(!maps.empty() && maps.size() < 16, ErrorKind::kConfig, "feature_mixing_loss: need 1..15 maps");
  const size_t subsets = (size_t{1} << maps.size()) - 1;
  if (weights.size() != subsets) {
    std::ostringstream msg;
    msg << "feature_mixing_loss: " << maps.size() << " maps need " << subsets << " weights, got "
        << weights.size();
    fail(ErrorKind::kConfig, msg.str());
  }
  torch::Tensor total;
  for (size_t mask = 1; mask <= subsets; ++mask) {
    torch::Tensor combined;
    for (size_t i = 0; i < maps.size(); ++i) {
      if ((mask >> i) & 1U) combined = combined.defined() ? combined + maps[i] : maps[i];
    }
    auto term = weights[mask - 1] * cross_entropy(combined, target, ignore_index);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor mixing_loss(const torch::Tensor& p1, const torch::Tensor& p2, const torch::Tensor& target,
                          const LossWeights& w, int64_t ignore_index) {
  w.validate();
  require(p1.sizes() == p2.sizes(), ErrorKind::kShape, "mixing_loss: prediction maps differ in shape");
  return w.alpha * cross_entropy(p1 + p2, target, ignore_index) +
         w.beta * cross_entropy(p1, target, ignore_index) +
         w.gamma * cross_entropy(p2, target, ignore_index);
}

}  // namespace sa2net
