// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "sa2net/data.hpp"
#include "sa2net/metrics.hpp"
#include "sa2net/model.hpp"

namespace sa2net {

struct TTAConfig {
  std::vector<double> scales = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  bool flip = true;
  /// Sliding-window size for each pass; 0 runs the whole image at once.
  int64_t tile = 0;
  int64_t tile_overlap = 32;

  void validate() const;
};

/// Maps a (B, C, H, W) input to (B, N, H, W) logits.
using LogitFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Rescaled extent for one TTA pass: round(n * scale) rounded up to a
/// multiple of 32. Throws when round(n * scale) < 32.
int64_t tta_extent(int64_t n, double scale);

/// Sliding-window logits with overlap averaging. Windows are `tile` square
/// (clipped to the image), stepped by tile - overlap and snapped to the far
/// edge so every pixel is covered.
torch::Tensor tiled_logits(const LogitFn& fn, const torch::Tensor& image, int64_t tile, int64_t overlap);

/// Mean class probabilities over every (scale, flip) pass, each mapped back
/// to the input resolution. Passes are reduced in configuration order.
torch::Tensor tta_probabilities(const LogitFn& fn, const torch::Tensor& image, const TTAConfig& config);

/// log of tta_probabilities.
torch::Tensor tta_predict(const LogitFn& fn, const torch::Tensor& image, const TTAConfig& config);
torch::Tensor tta_predict(SA2Net& model, const torch::Tensor& image, const TTAConfig& config);

/// Wraps a model as a LogitFn running without autograd in eval mode.
LogitFn model_logits(SA2Net& model);

/// (H, W) label map for one raw [0, 1] image.
torch::Tensor predict_image(const LogitFn& fn, const torch::Tensor& image, const TTAConfig& config);

/// TTA prediction over every sample, pooled into one report.
MetricAccumulator evaluate_samples(const LogitFn& fn, const std::vector<Sample>& samples, const TTAConfig& config);
MetricsReport evaluate_fold(const LogitFn& fn, const std::vector<Sample>& samples, const TTAConfig& config,
                            Averaging averaging = Averaging::kMicro);
MetricsReport evaluate_fold(SA2Net& model, const std::vector<Sample>& samples, const TTAConfig& config,
                            Averaging averaging = Averaging::kMicro);

}  // namespace sa2net
