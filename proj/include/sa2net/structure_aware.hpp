// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace sa2net {

/// Fixed 2D sinusoidal encodings, (H * W, dim). The first half of the
/// channels encodes the row, the second half the column. `dim` must be a
/// multiple of 4.
torch::Tensor sinusoidal_position_encoding(int64_t height, int64_t width, int64_t dim,
                                           torch::TensorOptions options = {});

/// (B, C, H, W) -> (B, H*W, C), row-major over pixels.
torch::Tensor flatten_tokens(const torch::Tensor& feature_map);
/// (B, H*W, C) -> (B, C, H, W).
torch::Tensor unflatten_tokens(const torch::Tensor& tokens, int64_t height, int64_t width);

struct DecoderBlockOutput {
  torch::Tensor queries;          // (B, N, d_h) class features after this block
  torch::Tensor tokens;           // (B, T, d_h)
  torch::Tensor cross_attention;  // (B, N, T), softmax over tokens
};

/// One decoder block.
///
/// The class queries first attend to each other (multi-head self-attention
/// with a residual). They then attend over the image tokens with keys and
/// values from two separate linear maps of the incoming tokens:
///
///   P = softmax(Q K^T)            (B, N, T)
///   c = P V                       (B, N, d_h) class-wise summaries
///   queries' = queries + c
///   tokens'  = tokens + S c       S[t, n] = P[n, t] / sum_m P[m, t]
///
/// so each token receives the class summaries weighted by how strongly each
/// class attended to it. With uniform P every token receives mean(V).
class DecoderBlockImpl : public torch::nn::Module {
 public:
  DecoderBlockImpl(int64_t hidden_dim, int64_t heads = 1);

  DecoderBlockOutput forward(const torch::Tensor& queries, const torch::Tensor& tokens);

  int64_t hidden_dim() const { return hidden_dim_; }
  int64_t heads() const { return heads_; }

  // Query self-attention.
  torch::nn::Linear self_query{nullptr}, self_key{nullptr}, self_value{nullptr}, self_out{nullptr};
  // Cross-attention onto the image tokens.
  torch::nn::Linear cross_query{nullptr}, cross_key{nullptr}, cross_value{nullptr};

 private:
  int64_t hidden_dim_;
  int64_t heads_;
};
TORCH_MODULE(DecoderBlock);

struct DecoderOutput {
  std::vector<torch::Tensor> token_features;   // f^1 .. f^L, each (B, T, d_h)
  std::vector<torch::Tensor> class_features;   // f_n^1 .. f_n^L, each (B, N, d_h)
  std::vector<torch::Tensor> cross_attention;  // per layer (B, N, T)
};

class TransformerDecoderImpl : public torch::nn::Module {
 public:
  TransformerDecoderImpl(int64_t hidden_dim, int64_t layers = 6, int64_t heads = 1);

  /// `queries` is (N, d_h) or (B, N, d_h); `tokens` is (B, T, d_h).
  DecoderOutput forward(const torch::Tensor& queries, const torch::Tensor& tokens);

  int64_t layers() const { return static_cast<int64_t>(blocks.size()); }

  std::vector<DecoderBlock> blocks;
};
TORCH_MODULE(TransformerDecoder);

/// Three linear layers with GeLU between them: d_h -> d_h -> d_h -> d_m.
class MaskHeadImpl : public torch::nn::Module {
 public:
  MaskHeadImpl(int64_t hidden_dim, int64_t mask_dim);
  torch::Tensor forward(const torch::Tensor& class_features);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
};
TORCH_MODULE(MaskHead);

/// Per-token class confidence: softmax over classes of m_n . f_t.
/// masks (B, N, d), tokens (B, T, d) -> (B, N, T).
torch::Tensor compute_confidence(const torch::Tensor& masks, const torch::Tensor& tokens);

/// Class-specific affinities from class features.
///
/// An MLP maps each class feature f_n to a diagonal metric g_n, and
///   a_n[t, u] = softmax_u( sum_d g_n[d] f[t, d] f[u, d] / sqrt(d_h) ).
/// Each a_n is a row-stochastic T x T operator on tokens.
class AffinityHeadImpl : public torch::nn::Module {
 public:
  explicit AffinityHeadImpl(int64_t hidden_dim);

  /// class_features (B, N, d_h), tokens (B, T, d_h) -> (B, N, T, T).
  torch::Tensor forward(const torch::Tensor& class_features, const torch::Tensor& tokens);

  /// Zeroes the last MLP layer. The metric then vanishes and every a_n
  /// becomes the uniform averaging operator.
  void zero_output_layer();

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  int64_t hidden_dim_;
};
TORCH_MODULE(AffinityHead);

/// A = sum_n conf[n, t] * a_n[t, :]  and  out = A f.
/// tokens (B, T, d), affinities (B, N, T, T), confidence (B, N, T).
torch::Tensor structure_affinity_transform(const torch::Tensor& tokens,
                                           const torch::Tensor& affinities,
                                           const torch::Tensor& confidence);

struct StructureAwareOptions {
  int64_t in_channels = 128;
  int64_t hidden_dim = 32;
  int64_t mask_dim = 32;
  int64_t num_classes = 4;
  int64_t layers = 6;
  int64_t heads = 1;
  bool residual = false;  // add the module input to the structure feature
  /// Keep the transformed features of every layer in the output (they do
  /// not feed the classifier).
  bool keep_all_layers = false;
};

struct StructureAwareOutput {
  torch::Tensor structure_feature;  // (B, C, H, W)
  torch::Tensor masks;              // (B, N, d_m)
  torch::Tensor confidence;         // (B, N, T) at the final layer
  torch::Tensor affinities;         // (B, N, T, T) at the final layer
  torch::Tensor mask_logits;        // (B, N, H, W): m_n . f_hat_t
  DecoderOutput decoder;
  std::vector<torch::Tensor> transformed_layers;  // only with keep_all_layers
};

/// Decoder with learnable class queries followed by the structure-affinity
/// transformation of the final layer's token features.
class StructureAwareModuleImpl : public torch::nn::Module {
 public:
  explicit StructureAwareModuleImpl(const StructureAwareOptions& options);

  StructureAwareOutput forward(const torch::Tensor& feature_map);

  const StructureAwareOptions& options() const { return options_; }

  torch::Tensor class_queries;  // (N, d_h)
  torch::nn::Linear in_proj{nullptr}, out_proj{nullptr};  // present iff C != d_h
  TransformerDecoder decoder{nullptr};
  MaskHead mask_head{nullptr};
  AffinityHead affinity_head{nullptr};

 private:
  StructureAwareOptions options_;
};
TORCH_MODULE(StructureAwareModule);

}  // namespace sa2net
