// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <utility>

namespace sa2net {

/// Reduced width used for query/key projections: max(1, floor(C / reduction)).
int64_t reduced_channels(int64_t channels, int64_t reduction = 8);

/// Throws a shape error unless `x` is a finite-sized (B, C, H, W) map with
/// the expected channel count.
void check_feature_map(const torch::Tensor& x, int64_t channels, const char* who);

struct ChannelAttentionResult {
  torch::Tensor output;     // (B, C, H, W)
  torch::Tensor attention;  // (B, C', C'), rows sum to one
};

/// Global channel attention.
///
/// Queries, keys and values are 1x1 projections C -> C'. Attention is taken
/// between the C' reduced channels over flattened pixels, scaled by
/// 1/sqrt(C'), then mapped back to C channels by a 3x3 projection, passed
/// through GeLU and added to the input.
class GlobalChannelAttentionImpl : public torch::nn::Module {
 public:
  explicit GlobalChannelAttentionImpl(int64_t channels, int64_t reduction = 8);

  torch::Tensor forward(const torch::Tensor& x);
  ChannelAttentionResult forward_with_attention(const torch::Tensor& x);

  /// Zeroes the 3x3 output projection, turning the block into the identity.
  void zero_output_projection();

  int64_t channels() const { return channels_; }
  int64_t reduced() const { return reduced_; }

  torch::nn::Conv2d query{nullptr}, key{nullptr}, value{nullptr}, project{nullptr};

 private:
  int64_t channels_;
  int64_t reduced_;
};
TORCH_MODULE(GlobalChannelAttention);

struct SpatialAttentionResult {
  torch::Tensor output;  // (B, C, H, W) including the residual
  torch::Tensor branch;  // GeLU(aggregated values), i.e. output minus input
  /// (B, H, W, H + W - 1): the column part with the duplicated self position
  /// removed, followed by the full row part.
  torch::Tensor attention;
};

/// Spatial criss-cross attention.
///
/// Every position attends to the H + W - 1 positions sharing its row or
/// column. Column energies have their self entry masked to -inf so the self
/// position is counted once (through the row energies).
class SpatialCrissCrossAttentionImpl : public torch::nn::Module {
 public:
  explicit SpatialCrissCrossAttentionImpl(int64_t channels, int64_t reduction = 8);

  torch::Tensor forward(const torch::Tensor& x);
  SpatialAttentionResult forward_with_attention(const torch::Tensor& x);

  /// Zeroes the value projection so the attention branch outputs zero.
  void zero_value_projection();

  int64_t channels() const { return channels_; }
  int64_t reduced() const { return reduced_; }

  torch::nn::Conv2d query{nullptr}, key{nullptr}, value{nullptr};

 private:
  int64_t channels_;
  int64_t reduced_;
};
TORCH_MODULE(SpatialCrissCrossAttention);

/// Scale-adaptive channel-spatial attention:
///   out = lambda1 * GCA(x) + lambda2 * SCA2(SCA1(x)).
class ScaleAdaptiveAttentionImpl : public torch::nn::Module {
 public:
  explicit ScaleAdaptiveAttentionImpl(int64_t channels, int64_t reduction = 8);

  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor channel_branch(const torch::Tensor& x);
  torch::Tensor spatial_branch(const torch::Tensor& x);

  void set_scales(double lambda1, double lambda2);

  GlobalChannelAttention gca{nullptr};
  SpatialCrissCrossAttention sca1{nullptr}, sca2{nullptr};
  torch::Tensor lambda1, lambda2;
};
TORCH_MODULE(ScaleAdaptiveAttention);

/// Returns true iff perturbing any source pixel changes every output pixel
/// after two stacked criss-cross passes. Uses random float64 weights drawn
/// from `seed`.
bool sca_receptive_field_check(int64_t height, int64_t width, uint64_t seed = 0);

/// Fraction of (source, target) position pairs with nonzero sensitivity of
/// `fn(x)` at the target to a perturbation of `x` at the source. The second
/// element is the boolean (H*W) x (H*W) reachability matrix, indexed
/// [source][target].
std::pair<double, torch::Tensor> perturbation_reachability(
    const std::function<torch::Tensor(const torch::Tensor&)>& fn, const torch::Tensor& x);

}  // namespace sa2net
