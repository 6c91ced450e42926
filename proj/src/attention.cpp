// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/attention.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "sa2net/error.hpp"

namespace sa2net {

namespace F = torch::nn::functional;

int64_t reduced_channels(int64_t channels, int64_t reduction) {
  require(channels >= 1, ErrorKind::kShape, "channel count must be >= 1");
  require(reduction >= 1, ErrorKind::kConfig, "reduction factor must be >= 1");
  return std::max<int64_t>(1, channels / reduction);
}

void check_feature_map(const torch::Tensor& x, int64_t channels, const char* who) {
  if (x.dim() != 4) {
    std::ostringstream msg;
    msg << who << ": expected a rank-4 (B, C, H, W) feature map, got rank " << x.dim();
    fail(ErrorKind::kShape, msg.str());
  }
  if (x.size(0) < 1 || x.size(1) < 1 || x.size(2) < 1 || x.size(3) < 1) {
    std::ostringstream msg;
    msg << who << ": every dimension must be >= 1, got " << x.sizes();
    fail(ErrorKind::kShape, msg.str());
  }
  if (x.size(1) != channels) {
    std::ostringstream msg;
    msg << who << ": expected " << channels << " channels, got " << x.size(1);
    fail(ErrorKind::kShape, msg.str());
  }
}

// ---------------------------------------------------------------------------
// Global channel attention

GlobalChannelAttentionImpl::GlobalChannelAttentionImpl(int64_t channels, int64_t reduction)
    : channels_(channels), reduced_(reduced_channels(channels, reduction)) {
  query = register_module("query", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_, reduced_, 1)));
  key = register_module("key", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_, reduced_, 1)));
  value = register_module("value", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_, reduced_, 1)));
  project = register_module(
      "project", torch::nn::Conv2d(torch::nn::Conv2dOptions(reduced_, channels_, 3).padding(1)));
}

ChannelAttentionResult GlobalChannelAttentionImpl::forward_with_attention(const torch::Tensor& x) {
  check_feature_map(x, channels_, "GlobalChannelAttention");
  const auto b = x.size(0);
  const auto h = x.size(2);
  const auto w = x.size(3);

  auto q = query->forward(x).reshape({b, reduced_, h * w});
  auto k = key->forward(x).reshape({b, reduced_, h * w});
  auto v = value->forward(x).reshape({b, reduced_, h * w});

  const double scale = 1.0 / std::sqrt(static_cast<double>(reduced_));
  auto attention = torch::softmax(torch::bmm(q, k.transpose(1, 2)) * scale, -1);
  auto attended = torch::bmm(attention, v).reshape({b, reduced_, h, w});
  auto output = x + torch::gelu(project->forward(attended));
  return {output, attention};
}

torch::Tensor GlobalChannelAttentionImpl::forward(const torch::Tensor& x) {
  return forward_with_attention(x).output;
}

void GlobalChannelAttentionImpl::zero_output_projection() {
  torch::NoGradGuard no_grad;
  project->weight.zero_();
  project->bias.zero_();
}

// ---------------------------------------------------------------------------
// Spatial criss-cross attention

SpatialCrissCrossAttentionImpl::SpatialCrissCrossAttentionImpl(int64_t channels, int64_t reduction)
    : channels_(channels), reduced_(reduced_channels(channels, reduction)) {
  query = register_module("query", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_, reduced_, 1)));
  key = register_module("key", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_, reduced_, 1)));
  // Per-channel 1x1 projection; keeps the full channel count.
  value = register_module(
      "value", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels_, channels_, 1).groups(channels_)));
}

SpatialAttentionResult SpatialCrissCrossAttentionImpl::forward_with_attention(const torch::Tensor& x) {
  check_feature_map(x, channels_, "SpatialCrissCrossAttention");
  const auto h = x.size(2);
  const auto w = x.size(3);

  auto q = query->forward(x);
  auto k = key->forward(x);
  auto v = value->forward(x);

  // energy_col[b, h, w, g]: query at (h, w) against key at (g, w).
  auto energy_col = torch::einsum("bchw,bcgw->bhwg", {q, k});
  // energy_row[b, h, w, u]: query at (h, w) against key at (h, u).
  auto energy_row = torch::einsum("bchw,bchu->bhwu", {q, k});

  auto self_mask = torch::zeros({h, h}, x.options());
  self_mask.fill_diagonal_(-std::numeric_limits<double>::infinity());
  energy_col = energy_col + self_mask.reshape({1, h, 1, h});

  auto attention = torch::softmax(torch::cat({energy_col, energy_row}, -1), -1);
  auto attn_col = attention.narrow(-1, 0, h);
  auto attn_row = attention.narrow(-1, h, w);

  auto aggregated = torch::einsum("bhwg,bcgw->bchw", {attn_col, v}) +
                    torch::einsum("bhwu,bchu->bchw", {attn_row, v});
  auto branch = torch::gelu(aggregated);

  // Drop the masked self entry so the exposed map has H + W - 1 slots.
  std::vector<int64_t> keep;
  keep.reserve(static_cast<size_t>(h * (h + w - 1)));
  for (int64_t row = 0; row < h; ++row) {
    for (int64_t g = 0; g < h; ++g) {
      if (g != row) keep.push_back(g);
    }
    for (int64_t u = 0; u < w; ++u) keep.push_back(h + u);
  }
  auto index = torch::tensor(keep, torch::kLong).reshape({1, h, 1, h + w - 1});
  index = index.expand({x.size(0), h, w, h + w - 1});
  auto sparse_attention = attention.gather(-1, index);

  return {x + branch, branch, sparse_attention};
}

torch::Tensor SpatialCrissCrossAttentionImpl::forward(const torch::Tensor& x) {
  return forward_with_attention(x).output;
}

void SpatialCrissCrossAttentionImpl::zero_value_projection() {
  torch::NoGradGuard no_grad;
  value->weight.zero_();
  value->bias.zero_();
}

// ---------------------------------------------------------------------------
// Scale-adaptive fusion

ScaleAdaptiveAttentionImpl::ScaleAdaptiveAttentionImpl(int64_t channels, int64_t reduction) {
  gca = register_module("gca", GlobalChannelAttention(channels, reduction));
  sca1 = register_module("sca1", SpatialCrissCrossAttention(channels, reduction));
  sca2 = register_module("sca2", SpatialCrissCrossAttention(channels, reduction));
  lambda1 = register_parameter("lambda1", torch::ones({1}));
  lambda2 = register_parameter("lambda2", torch::ones({1}));
}

torch::Tensor ScaleAdaptiveAttentionImpl::channel_branch(const torch::Tensor& x) {
  return gca->forward(x);
}

torch::Tensor ScaleAdaptiveAttentionImpl::spatial_branch(const torch::Tensor& x) {
  return sca2->forward(sca1->forward(x));
}

torch::Tensor ScaleAdaptiveAttentionImpl::forward(const torch::Tensor& x) {
  return lambda1 * channel_branch(x) + lambda2 * spatial_branch(x);
}

void ScaleAdaptiveAttentionImpl::set_scales(double l1, double l2) {
  torch::NoGradGuard no_grad;
  lambda1.fill_(l1);
  lambda2.fill_(l2);
}

// ---------------------------------------------------------------------------
// Receptive-field utilities

std::pair<double, torch::Tensor> perturbation_reachability(
    const std::function<torch::Tensor(const torch::Tensor&)>& fn, const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(0) == 1, ErrorKind::kShape,
          "perturbation_reachability expects a single (1, C, H, W) input");
  torch::NoGradGuard no_grad;
  const auto h = x.size(2);
  const auto w = x.size(3);
  const auto positions = h * w;
  const auto base = fn(x);

  auto reach = torch::zeros({positions, positions}, torch::kBool);
  for (int64_t src = 0; src < positions; ++src) {
    auto perturbed = x.clone();
    perturbed.select(2, src / w).select(2, src % w).add_(1.0);
    auto delta = (fn(perturbed) - base).abs().sum({0, 1}).reshape({positions});
    reach[src] = delta > 0;
  }
  const double fraction = reach.to(torch::kDouble).mean().item<double>();
  return {fraction, reach};
}

bool sca_receptive_field_check(int64_t height, int64_t width, uint64_t seed) {
  require(height >= 1 && width >= 1, ErrorKind::kShape, "grid must be at least 1x1");
  torch::manual_seed(seed);
  constexpr int64_t kChannels = 8;
  SpatialCrissCrossAttention first(kChannels), second(kChannels);
  first->to(torch::kFloat64);
  second->to(torch::kFloat64);
  auto x = torch::randn({1, kChannels, height, width}, torch::kFloat64);
  auto stacked = [&](const torch::Tensor& input) { return second->forward(first->forward(input)); };
  return perturbation_reachability(stacked, x).first == 1.0;
}

}  // namespace sa2net
