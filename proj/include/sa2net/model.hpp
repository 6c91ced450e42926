// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sa2net/attention.hpp"
#include "sa2net/structure_aware.hpp"

namespace sa2net {

enum class ModelVariant {
  kFull,      // attention + structure-aware paths, two heads
  kBaseline,  // backbone + fusion + a single head
};

enum class SamHead {
  kConv,     // 1x1 convolution on the structure feature
  kMaskDot,  // class-mask / feature dot products
};

struct ModelConfig {
  std::string backbone_name = "tiny_conv";
  int64_t in_channels = 1;
  std::array<int64_t, 4> stage_channels = {16, 32, 64, 128};
  int64_t hidden_dim = 32;  // d_h
  int64_t mask_dim = 32;    // d_m
  int64_t decoder_layers = 6;
  int64_t decoder_heads = 1;
  int64_t num_classes = 4;
  int64_t reduction_factor = 8;
  int64_t fusion_channels = 32;
  ModelVariant variant = ModelVariant::kFull;
  bool sam_residual = false;
  SamHead sam_head = SamHead::kConv;

  void validate() const;
};

/// Multi-scale features at strides 4, 8, 16 and 32.
using BackboneOutput = std::vector<torch::Tensor>;

/// Plug-in point for feature extractors.
class BackboneImpl : public torch::nn::Module {
 public:
  virtual ~BackboneImpl() = default;
  virtual BackboneOutput forward(const torch::Tensor& image) = 0;
  /// Channel count of each of the four stages.
  virtual std::array<int64_t, 4> channels() const = 0;
};

using BackboneFactory = std::function<std::shared_ptr<BackboneImpl>(const ModelConfig&)>;

/// Name -> constructor registry. "tiny_conv" is always registered;
/// "external" resolves only after a caller registers a factory under it.
class BackboneRegistry {
 public:
  static BackboneRegistry& instance();
  void add(const std::string& name, BackboneFactory factory);
  bool contains(const std::string& name) const;
  std::shared_ptr<BackboneImpl> create(const ModelConfig& config) const;
  std::vector<std::string> names() const;

 private:
  BackboneRegistry();
  std::vector<std::pair<std::string, BackboneFactory>> factories_;
};

/// Throws a shape error unless H and W are positive multiples of 32.
void check_backbone_input(const torch::Tensor& image);

/// Strided convolution stages with GroupNorm + GeLU.
class TinyConvBackboneImpl : public BackboneImpl {
 public:
  TinyConvBackboneImpl(int64_t in_channels, std::array<int64_t, 4> widths);

  BackboneOutput forward(const torch::Tensor& image) override;
  std::array<int64_t, 4> channels() const override { return widths_; }

  torch::nn::Sequential stem{nullptr};
  std::vector<torch::nn::Sequential> stages;

 private:
  std::array<int64_t, 4> widths_;
};

/// Two logit maps at input resolution. `sam` (p1) is undefined for the
/// baseline variant.
struct PredictionPair {
  torch::Tensor sam;        // p1, structure-aware path
  torch::Tensor attention;  // p2, channel-spatial attention path
};

/// Top-down fusion from stride 32 to stride 4: 1x1 projection, bilinear
/// upsampling and addition, followed by a 3x3 smoothing convolution.
class TopDownFusionImpl : public torch::nn::Module {
 public:
  TopDownFusionImpl(int64_t top_channels, int64_t out_channels);
  /// `laterals` are the already projected stride-4/8/16 maps.
  torch::Tensor forward(const torch::Tensor& top, const std::array<torch::Tensor, 3>& laterals);

  torch::nn::Conv2d top_proj{nullptr};
  torch::nn::Sequential smooth{nullptr};
};
TORCH_MODULE(TopDownFusion);

class SA2NetImpl : public torch::nn::Module {
 public:
  explicit SA2NetImpl(const ModelConfig& config);

  PredictionPair forward(const torch::Tensor& image);
  /// Aggregated logits (p1 + p2, or the single head of the baseline).
  torch::Tensor predict_logits(const torch::Tensor& image);

  const ModelConfig& config() const { return config_; }

  std::shared_ptr<BackboneImpl> backbone;
  std::array<torch::nn::Conv2d, 3> laterals{nullptr, nullptr, nullptr};
  ScaleAdaptiveAttention sacsam{nullptr};
  StructureAwareModule sam{nullptr};
  TopDownFusion attention_fusion{nullptr}, sam_fusion{nullptr};
  torch::nn::Conv2d attention_head{nullptr}, sam_head{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(SA2Net);

/// p1 + p2 (p2 alone when p1 is undefined).
torch::Tensor aggregate_predictions(const PredictionPair& pair);

/// Per-pixel argmax over classes, ties broken toward the lower index.
/// (B, N, H, W) -> (B, H, W) int64.
torch::Tensor predict_labels(const torch::Tensor& logits);

/// Bilinear, align_corners = false.
torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t height, int64_t width);

}  // namespace sa2net
