// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/structure_aware.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "sa2net/error.hpp"

namespace sa2net {

torch::Tensor sinusoidal_position_encoding(int64_t height, int64_t width, int64_t dim,
                                           torch::TensorOptions options) {
  require(dim % 4 == 0, ErrorKind::kConfig, "positional encoding width must be a multiple of 4");
  const int64_t quarter = dim / 4;
  auto opts = options.dtype(torch::kFloat64);
  // Frequencies 1 / 10000^(i / quarter).
  auto freq = torch::exp(torch::arange(quarter, opts) * (-std::log(10000.0) / static_cast<double>(quarter)));
  auto rows = torch::arange(height, opts).unsqueeze(1) * freq.unsqueeze(0);  // (H, q)
  auto cols = torch::arange(width, opts).unsqueeze(1) * freq.unsqueeze(0);   // (W, q)
  auto row_enc = torch::cat({torch::sin(rows), torch::cos(rows)}, 1);        // (H, dim/2)
  auto col_enc = torch::cat({torch::sin(cols), torch::cos(cols)}, 1);        // (W, dim/2)
  auto grid = torch::cat({row_enc.unsqueeze(1).expand({height, width, dim / 2}),
                          col_enc.unsqueeze(0).expand({height, width, dim / 2})},
                         2);
  return grid.reshape({height * width, dim}).to(options.dtype());
}

torch::Tensor flatten_tokens(const torch::Tensor& feature_map) {
  require(feature_map.dim() == 4, ErrorKind::kShape, "flatten_tokens expects (B, C, H, W)");
  return feature_map.flatten(2).transpose(1, 2);
}

torch::Tensor unflatten_tokens(const torch::Tensor& tokens, int64_t height, int64_t width) {
  require(tokens.dim() == 3 && tokens.size(1) == height * width, ErrorKind::kShape,
          "unflatten_tokens: token count does not match H * W");
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), height, width});
}

namespace {

void check_tokens(const torch::Tensor& tokens, int64_t dim, const char* who) {
  if (tokens.dim() != 3 || tokens.size(2) != dim) {
    std::ostringstream msg;
    msg << who << ": expected tokens of shape (B, T, " << dim << "), got " << tokens.sizes();
    fail(ErrorKind::kShape, msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Decoder

DecoderBlockImpl::DecoderBlockImpl(int64_t hidden_dim, int64_t heads)
    : hidden_dim_(hidden_dim), heads_(heads) {
  require(heads >= 1 && hidden_dim % heads == 0, ErrorKind::kConfig,
          "hidden dimension must be divisible by the head count");
  auto linear = [&](const std::string& name, bool bias) {
    return register_module(name, torch::nn::Linear(torch::nn::LinearOptions(hidden_dim, hidden_dim).bias(bias)));
  };
  self_query = linear("self_query", false);
  self_key = linear("self_key", false);
  self_value = linear("self_value", true);
  self_out = linear("self_out", true);
  cross_query = linear("cross_query", false);
  cross_key = linear("cross_key", false);
  cross_value = linear("cross_value", true);
}

DecoderBlockOutput DecoderBlockImpl::forward(const torch::Tensor& queries, const torch::Tensor& tokens) {
  check_tokens(queries, hidden_dim_, "DecoderBlock queries");
  check_tokens(tokens, hidden_dim_, "DecoderBlock tokens");
  require(queries.size(0) == tokens.size(0), ErrorKind::kShape,
          "DecoderBlock: query and token batch sizes differ");
  const auto b = queries.size(0);
  const auto n = queries.size(1);
  const auto head_dim = hidden_dim_ / heads_;

  auto split = [&](const torch::Tensor& t) {
    return t.reshape({b, n, heads_, head_dim}).transpose(1, 2);  // (B, heads, N, hd)
  };
  auto sq = split(self_query->forward(queries));
  auto sk = split(self_key->forward(queries));
  auto sv = split(self_value->forward(queries));
  auto self_weights = torch::softmax(torch::matmul(sq, sk.transpose(-1, -2)) /
                                         std::sqrt(static_cast<double>(head_dim)),
                                     -1);
  auto mixed = torch::matmul(self_weights, sv).transpose(1, 2).reshape({b, n, hidden_dim_});
  auto q = queries + self_out->forward(mixed);

  auto cq = cross_query->forward(q);
  auto ck = cross_key->forward(tokens);
  auto cv = cross_value->forward(tokens);
  auto logits = torch::bmm(cq, ck.transpose(1, 2)) / std::sqrt(static_cast<double>(hidden_dim_));
  auto log_attention = torch::log_softmax(logits, -1);  // (B, N, T)
  auto attention = log_attention.exp();
  auto class_summary = torch::bmm(attention, cv);  // (B, N, d_h)

  // Token-side routing: column-normalised attention, computed in log space.
  auto routing = torch::softmax(log_attention, 1).transpose(1, 2);  // (B, T, N)
  auto new_tokens = tokens + torch::bmm(routing, class_summary);

  return {q + class_summary, new_tokens, attention};
}

TransformerDecoderImpl::TransformerDecoderImpl(int64_t hidden_dim, int64_t layers, int64_t heads) {
  require(layers >= 1, ErrorKind::kConfig, "decoder needs at least one layer");
  for (int64_t i = 0; i < layers; ++i) {
    blocks.push_back(register_module("block" + std::to_string(i), DecoderBlock(hidden_dim, heads)));
  }
}

DecoderOutput TransformerDecoderImpl::forward(const torch::Tensor& queries, const torch::Tensor& tokens) {
  require(tokens.dim() == 3, ErrorKind::kShape, "TransformerDecoder: tokens must be (B, T, d_h)");
  auto q = queries;
  if (q.dim() == 2) {
    q = q.unsqueeze(0).expand({tokens.size(0), q.size(0), q.size(1)});
  }
  auto f = tokens;
  DecoderOutput out;
  for (auto& block : blocks) {
    auto step = block->forward(q, f);
    q = step.queries;
    f = step.tokens;
    out.token_features.push_back(f);
    out.class_features.push_back(q);
    out.cross_attention.push_back(step.cross_attention);
  }
  return out;
}

MaskHeadImpl::MaskHeadImpl(int64_t hidden_dim, int64_t mask_dim) {
  fc1 = register_module("fc1", torch::nn::Linear(hidden_dim, hidden_dim));
  fc2 = register_module("fc2", torch::nn::Linear(hidden_dim, hidden_dim));
  fc3 = register_module("fc3", torch::nn::Linear(hidden_dim, mask_dim));
}

torch::Tensor MaskHeadImpl::forward(const torch::Tensor& class_features) {
  auto h = torch::gelu(fc1->forward(class_features));
  h = torch::gelu(fc2->forward(h));
  return fc3->forward(h);
}

// ---------------------------------------------------------------------------
// Structure-affinity transformation

torch::Tensor compute_confidence(const torch::Tensor& masks, const torch::Tensor& tokens) {
  require(masks.dim() == 3 && tokens.dim() == 3, ErrorKind::kShape,
          "compute_confidence expects masks (B, N, d) and tokens (B, T, d)");
  if (masks.size(2) != tokens.size(2)) {
    std::ostringstream msg;
    msg << "compute_confidence: mask width " << masks.size(2) << " differs from token width "
        << tokens.size(2);
    fail(ErrorKind::kShape, msg.str());
  }
  require(masks.size(0) == tokens.size(0), ErrorKind::kShape, "compute_confidence: batch mismatch");
  return torch::softmax(torch::bmm(masks, tokens.transpose(1, 2)), 1);
}

AffinityHeadImpl::AffinityHeadImpl(int64_t hidden_dim) : hidden_dim_(hidden_dim) {
  fc1 = register_module("fc1", torch::nn::Linear(hidden_dim, hidden_dim));
  fc2 = register_module("fc2", torch::nn::Linear(hidden_dim, hidden_dim));
}

torch::Tensor AffinityHeadImpl::forward(const torch::Tensor& class_features, const torch::Tensor& tokens) {
  check_tokens(class_features, hidden_dim_, "AffinityHead class features");
  check_tokens(tokens, hidden_dim_, "AffinityHead tokens");
  auto metric = fc2->forward(torch::gelu(fc1->forward(class_features)));  // (B, N, d)
  auto weighted = tokens.unsqueeze(1) * metric.unsqueeze(2);              // (B, N, T, d)
  auto logits = torch::matmul(weighted, tokens.unsqueeze(1).transpose(-1, -2)) /
                std::sqrt(static_cast<double>(hidden_dim_));
  return torch::softmax(logits, -1);
}

void AffinityHeadImpl::zero_output_layer() {
  torch::NoGradGuard no_grad;
  fc2->weight.zero_();
  fc2->bias.zero_();
}

torch::Tensor structure_affinity_transform(const torch::Tensor& tokens, const torch::Tensor& affinities,
                                           const torch::Tensor& confidence) {
  require(tokens.dim() == 3 && affinities.dim() == 4 && confidence.dim() == 3, ErrorKind::kShape,
          "structure_affinity_transform expects tokens (B,T,d), affinities (B,N,T,T), confidence (B,N,T)");
  const auto t = tokens.size(1);
  if (affinities.size(2) != t || affinities.size(3) != t || confidence.size(2) != t ||
      affinities.size(1) != confidence.size(1) || affinities.size(0) != tokens.size(0) ||
      confidence.size(0) != tokens.size(0)) {
    std::ostringstream msg;
    msg << "structure_affinity_transform: incompatible shapes tokens " << tokens.sizes()
        << ", affinities " << affinities.sizes() << ", confidence " << confidence.sizes();
    fail(ErrorKind::kShape, msg.str());
  }
  auto combined = (affinities * confidence.unsqueeze(-1)).sum(1);  // (B, T, T)
  return torch::bmm(combined, tokens);
}

// ---------------------------------------------------------------------------
// Structure-aware module

StructureAwareModuleImpl::StructureAwareModuleImpl(const StructureAwareOptions& options)
    : options_(options) {
  require(options.num_classes >= 1, ErrorKind::kConfig, "num_classes must be >= 1");
  require(options.mask_dim == options.hidden_dim, ErrorKind::kConfig,
          "mask dimension must equal the hidden dimension (confidence is a dot product)");
  class_queries = register_parameter(
      "class_queries", torch::randn({options.num_classes, options.hidden_dim}) * 0.5);
  if (options.in_channels != options.hidden_dim) {
    in_proj = register_module(
        "in_proj", torch::nn::Linear(torch::nn::LinearOptions(options.in_channels, options.hidden_dim).bias(false)));
    out_proj = register_module(
        "out_proj", torch::nn::Linear(torch::nn::LinearOptions(options.hidden_dim, options.in_channels).bias(false)));
  }
  decoder = register_module("decoder", TransformerDecoder(options.hidden_dim, options.layers, options.heads));
  mask_head = register_module("mask_head", MaskHead(options.hidden_dim, options.mask_dim));
  affinity_head = register_module("affinity_head", AffinityHead(options.hidden_dim));
}

StructureAwareOutput StructureAwareModuleImpl::forward(const torch::Tensor& feature_map) {
  require(feature_map.dim() == 4 && feature_map.size(1) == options_.in_channels, ErrorKind::kShape,
          "StructureAwareModule: expected (B, " + std::to_string(options_.in_channels) + ", H, W)");
  const auto h = feature_map.size(2);
  const auto w = feature_map.size(3);

  auto tokens = flatten_tokens(feature_map);
  if (in_proj) tokens = in_proj->forward(tokens);
  tokens = tokens + sinusoidal_position_encoding(h, w, options_.hidden_dim, tokens.options()).unsqueeze(0);

  StructureAwareOutput out;
  out.decoder = decoder->forward(class_queries, tokens);
  out.masks = mask_head->forward(out.decoder.class_features.back());

  auto transform = [&](size_t layer) {
    const auto& f = out.decoder.token_features[layer];
    auto confidence = compute_confidence(out.masks, f);
    auto affinities = affinity_head->forward(out.decoder.class_features[layer], f);
    return std::make_tuple(structure_affinity_transform(f, affinities, confidence), confidence, affinities);
  };

  const size_t last = out.decoder.token_features.size() - 1;
  if (options_.keep_all_layers) {
    for (size_t layer = 0; layer < last; ++layer) {
      out.transformed_layers.push_back(std::get<0>(transform(layer)));
    }
  }
  auto [transformed, confidence, affinities] = transform(last);
  if (options_.keep_all_layers) out.transformed_layers.push_back(transformed);
  out.confidence = confidence;
  out.affinities = affinities;
  out.mask_logits = unflatten_tokens(torch::bmm(transformed, out.masks.transpose(1, 2)), h, w);

  auto projected = out_proj ? out_proj->forward(transformed) : transformed;
  out.structure_feature = unflatten_tokens(projected, h, w);
  if (options_.residual) out.structure_feature = out.structure_feature + feature_map;
  return out;
}

}  // namespace sa2net
