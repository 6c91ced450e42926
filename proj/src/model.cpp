// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/model.hpp"

#include <algorithm>
#include <sstream>

#include "sa2net/error.hpp"

namespace sa2net {

namespace F = torch::nn::functional;

void ModelConfig::validate() const {
  require(in_channels >= 1, ErrorKind::kConfig, "in_channels must be >= 1");
  require(num_classes >= 2, ErrorKind::kConfig, "num_classes must be >= 2");
  require(decoder_layers >= 1, ErrorKind::kConfig, "decoder_layers must be >= 1");
  require(reduction_factor >= 1, ErrorKind::kConfig, "reduction_factor must be >= 1");
  require(hidden_dim % 4 == 0, ErrorKind::kConfig, "hidden_dim must be a multiple of 4");
  require(mask_dim == hidden_dim, ErrorKind::kConfig, "mask_dim must equal hidden_dim");
  require(decoder_heads >= 1 && hidden_dim % decoder_heads == 0, ErrorKind::kConfig,
          "hidden_dim must be divisible by decoder_heads");
  require(fusion_channels >= 1, ErrorKind::kConfig, "fusion_channels must be >= 1");
  for (size_t i = 0; i < stage_channels.size(); ++i) {
    require(stage_channels[i] >= 1, ErrorKind::kConfig, "stage channels must be >= 1");
    if (i > 0) {
      require(stage_channels[i] >= stage_channels[i - 1], ErrorKind::kConfig,
              "stage channels must be non-decreasing");
    }
  }
}

// ---------------------------------------------------------------------------
// Backbones

void check_backbone_input(const torch::Tensor& image) {
  require(image.dim() == 4, ErrorKind::kShape, "backbone input must be (B, C, H, W)");
  const auto h = image.size(2);
  const auto w = image.size(3);
  if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0) {
    std::ostringstream msg;
    msg << "input size " << h << "x" << w << " is not divisible by 32; resize to "
        << std::max<int64_t>(32, (h + 31) / 32 * 32) << "x" << std::max<int64_t>(32, (w + 31) / 32 * 32)
        << " (or crop) before calling the model";
    fail(ErrorKind::kShape, msg.str());
  }
}

namespace {

int64_t norm_groups(int64_t channels) {
  int64_t groups = std::max<int64_t>(1, channels / 8);
  while (channels % groups != 0) --groups;
  return groups;
}

// 3x3 convolution, GroupNorm, GeLU.
void append_conv_block(torch::nn::Sequential& seq, int64_t in, int64_t out, int64_t stride) {
  seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
  seq->push_back(torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(out), out)));
  seq->push_back(torch::nn::GELU());
}

}  // namespace

TinyConvBackboneImpl::TinyConvBackboneImpl(int64_t in_channels, std::array<int64_t, 4> widths)
    : widths_(widths) {
  torch::nn::Sequential stem_seq;
  append_conv_block(stem_seq, in_channels, widths[0], 2);
  append_conv_block(stem_seq, widths[0], widths[0], 2);
  append_conv_block(stem_seq, widths[0], widths[0], 1);
  stem = register_module("stem", stem_seq);
  for (size_t i = 1; i < widths.size(); ++i) {
    torch::nn::Sequential stage;
    append_conv_block(stage, widths[i - 1], widths[i], 2);
    append_conv_block(stage, widths[i], widths[i], 1);
    stages.push_back(register_module("stage" + std::to_string(i), stage));
  }
}

BackboneOutput TinyConvBackboneImpl::forward(const torch::Tensor& image) {
  check_backbone_input(image);
  BackboneOutput out;
  out.push_back(stem->forward(image));
  for (auto& stage : stages) out.push_back(stage->forward(out.back()));
  return out;
}

BackboneRegistry::BackboneRegistry() {
  add("tiny_conv", [](const ModelConfig& cfg) {
    return std::make_shared<TinyConvBackboneImpl>(cfg.in_channels, cfg.stage_channels);
  });
}

BackboneRegistry& BackboneRegistry::instance() {
  static BackboneRegistry registry;
  return registry;
}

void BackboneRegistry::add(const std::string& name, BackboneFactory factory) {
  for (auto& [key, existing] : factories_) {
    if (key == name) {
      existing = std::move(factory);
      return;
    }
  }
  factories_.emplace_back(name, std::move(factory));
}

bool BackboneRegistry::contains(const std::string& name) const {
  return std::any_of(factories_.begin(), factories_.end(), [&](const auto& e) { return e.first == name; });
}

std::shared_ptr<BackboneImpl> BackboneRegistry::create(const ModelConfig& config) const {
  for (const auto& [key, factory] : factories_) {
    if (key == config.backbone_name) return factory(config);
  }
  std::ostringstream msg;
  msg << "unknown backbone '" << config.backbone_name << "'";
  if (config.backbone_name == "external") {
    msg << "; register a factory with BackboneRegistry::instance().add(\"external\", ...) first";
  }
  fail(ErrorKind::kConfig, msg.str());
}

std::vector<std::string> BackboneRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& entry : factories_) out.push_back(entry.first);
  return out;
}

// ---------------------------------------------------------------------------
// Heads and fusion

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t height, int64_t width) {
  if (x.size(-2) == height && x.size(-1) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

TopDownFusionImpl::TopDownFusionImpl(int64_t top_channels, int64_t out_channels) {
  top_proj = register_module("top_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(top_channels, out_channels, 1)));
  torch::nn::Sequential seq;
  append_conv_block(seq, out_channels, out_channels, 1);
  smooth = register_module("smooth", seq);
}

torch::Tensor TopDownFusionImpl::forward(const torch::Tensor& top, const std::array<torch::Tensor, 3>& laterals) {
  auto x = top_proj->forward(top);
  for (int i = 2; i >= 0; --i) {
    const auto& lateral = laterals[static_cast<size_t>(i)];
    x = resize_bilinear(x, lateral.size(2), lateral.size(3)) + lateral;
  }
  return smooth->forward(x);
}

SA2NetImpl::SA2NetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  backbone = register_module("backbone", BackboneRegistry::instance().create(config_));
  const auto widths = backbone->channels();
  for (size_t i = 0; i < 3; ++i) {
    laterals[i] = register_module(
        "lateral" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[i], config_.fusion_channels, 1)));
  }
  attention_fusion = register_module("attention_fusion", TopDownFusion(widths[3], config_.fusion_channels));
  attention_head = register_module(
      "attention_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.fusion_channels, config_.num_classes, 1)));

  if (config_.variant == ModelVariant::kFull) {
    sacsam = register_module("sacsam", ScaleAdaptiveAttention(widths[3], config_.reduction_factor));
    StructureAwareOptions sam_options;
    sam_options.in_channels = widths[3];
    sam_options.hidden_dim = config_.hidden_dim;
    sam_options.mask_dim = config_.mask_dim;
    sam_options.num_classes = config_.num_classes;
    sam_options.layers = config_.decoder_layers;
    sam_options.heads = config_.decoder_heads;
    sam_options.residual = config_.sam_residual;
    sam = register_module("sam", StructureAwareModule(sam_options));
    if (config_.sam_head == SamHead::kConv) {
      sam_fusion = register_module("sam_fusion", TopDownFusion(widths[3], config_.fusion_channels));
      sam_head = register_module(
          "sam_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.fusion_channels, config_.num_classes, 1)));
    }
  }
}

PredictionPair SA2NetImpl::forward(const torch::Tensor& image) {
  require(image.dim() == 4 && image.size(1) == config_.in_channels, ErrorKind::kShape,
          "SA2Net: expected (B, " + std::to_string(config_.in_channels) + ", H, W) input");
  const auto h = image.size(2);
  const auto w = image.size(3);
  auto features = backbone->forward(image);
  require(features.size() == 4, ErrorKind::kShape, "backbone must return four stages");
  std::array<torch::Tensor, 3> lateral_maps;
  for (size_t i = 0; i < 3; ++i) lateral_maps[i] = laterals[i]->forward(features[i]);

  PredictionPair out;
  if (config_.variant == ModelVariant::kBaseline) {
    auto fused = attention_fusion->forward(features[3], lateral_maps);
    out.attention = resize_bilinear(attention_head->forward(fused), h, w);
    return out;
  }

  auto enhanced = sacsam->forward(features[3]);
  out.attention = resize_bilinear(attention_head->forward(attention_fusion->forward(enhanced, lateral_maps)), h, w);

  auto structure = sam->forward(enhanced);
  if (config_.sam_head == SamHead::kConv) {
    out.sam = resize_bilinear(sam_head->forward(sam_fusion->forward(structure.structure_feature, lateral_maps)), h, w);
  } else {
    out.sam = resize_bilinear(structure.mask_logits, h, w);
  }
  return out;
}

torch::Tensor SA2NetImpl::predict_logits(const torch::Tensor& image) {
  return aggregate_predictions(forward(image));
}

torch::Tensor aggregate_predictions(const PredictionPair& pair) {
  require(pair.attention.defined(), ErrorKind::kShape, "aggregate_predictions: missing attention-path map");
  if (!pair.sam.defined()) return pair.attention;
  require(pair.sam.sizes() == pair.attention.sizes(), ErrorKind::kShape,
          "aggregate_predictions: prediction maps differ in shape");
  return pair.sam + pair.attention;
}

torch::Tensor predict_labels(const torch::Tensor& logits) {
  require(logits.dim() == 4 && logits.size(1) >= 2, ErrorKind::kShape,
          "predict_labels expects (B, N, H, W) logits with N >= 2");
  // argmax returns the first maximal index.
  return logits.argmax(1);
}

}  // namespace sa2net
