// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/inference.hpp"

#include <cmath>
#include <sstream>

#include "sa2net/error.hpp"

namespace sa2net {

void TTAConfig::validate() const {
  require(!scales.empty(), ErrorKind::kConfig, "tta: scale list is empty");
  for (const auto s : scales) {
    require(std::isfinite(s) && s > 0.0, ErrorKind::kConfig, "tta: scales must be positive");
  }
  require(tile == 0 || (tile >= 32 && tile % 32 == 0), ErrorKind::kConfig,
          "tta: tile must be 0 or a positive multiple of 32");
  require(tile == 0 || (0 <= tile_overlap && tile_overlap < tile), ErrorKind::kConfig,
          "tta: tile_overlap must lie in [0, tile)");
}

int64_t tta_extent(int64_t n, double scale) {
  const auto scaled = std::llround(static_cast<double>(n) * scale);
  if (scaled < 32) {
    std::ostringstream msg;
    msg << "tta: scale " << scale << " shrinks extent " << n << " to " << scaled << " (< 32)";
    fail(ErrorKind::kShape, msg.str());
  }
  return (scaled + 31) / 32 * 32;
}

namespace {

std::vector<int64_t> window_starts(int64_t extent, int64_t tile, int64_t stride) {
  if (extent <= tile) return {0};
  std::vector<int64_t> starts;
  for (int64_t s = 0;; s += stride) {
    if (s + tile >= extent) {
      starts.push_back(extent - tile);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

}  // namespace

torch::Tensor tiled_logits(const LogitFn& fn, const torch::Tensor& image, int64_t tile, int64_t overlap) {
  require(image.dim() == 4, ErrorKind::kShape, "tiled_logits: expected (B, C, H, W)");
  require(tile > 0 && 0 <= overlap && overlap < tile, ErrorKind::kConfig, "tiled_logits: invalid tile geometry");
  using torch::indexing::Slice;
  const auto h = image.size(2);
  const auto w = image.size(3);
  const auto th = std::min(tile, h);
  const auto tw = std::min(tile, w);
  torch::Tensor sum, count;
  for (const auto y : window_starts(h, th, tile - overlap)) {
    for (const auto x : window_starts(w, tw, tile - overlap)) {
      auto logits = fn(image.index({Slice(), Slice(), Slice(y, y + th), Slice(x, x + tw)}));
      if (!sum.defined()) {
        sum = torch::zeros({image.size(0), logits.size(1), h, w}, logits.options());
        count = torch::zeros({1, 1, h, w}, logits.options());
      }
      sum.index({Slice(), Slice(), Slice(y, y + th), Slice(x, x + tw)}) += logits;
      count.index({Slice(), Slice(), Slice(y, y + th), Slice(x, x + tw)}) += 1.0;
    }
  }
  return sum / count;
}

torch::Tensor tta_probabilities(const LogitFn& fn, const torch::Tensor& image, const TTAConfig& config) {
  config.validate();
  require(image.dim() == 4, ErrorKind::kShape, "tta: expected (B, C, H, W) input");
  const auto h = image.size(2);
  const auto w = image.size(3);
  auto forward = [&](const torch::Tensor& x) {
    return config.tile > 0 ? tiled_logits(fn, x, config.tile, config.tile_overlap) : fn(x);
  };

  torch::Tensor sum;
  int64_t passes = 0;
  for (const auto scale : config.scales) {
    const auto sh = tta_extent(h, scale);
    const auto sw = tta_extent(w, scale);
    const auto resized = resize_bilinear(image, sh, sw);
    for (int flipped = 0; flipped < (config.flip ? 2 : 1); ++flipped) {
      auto input = flipped ? resized.flip({3}) : resized;
      auto probs = torch::softmax(forward(input), 1);
      if (flipped) probs = probs.flip({3});
      probs = resize_bilinear(probs, h, w);
      sum = sum.defined() ? sum + probs : probs;
      ++passes;
    }
  }
  return sum / static_cast<double>(passes);
}

torch::Tensor tta_predict(const LogitFn& fn, const torch::Tensor& image, const TTAConfig& config) {
  return tta_probabilities(fn, image, config).log();
}

LogitFn model_logits(SA2Net& model) {
  return [model](const torch::Tensor& x) mutable {
    torch::NoGradGuard no_grad;
    model->eval();
    return model->predict_logits(x);
  };
}

torch::Tensor tta_predict(SA2Net& model, const torch::Tensor& image, const TTAConfig& config) {
  return tta_predict(model_logits(model), image, config);
}

torch::Tensor predict_image(const LogitFn& fn, const torch::Tensor& image, const TTAConfig& config) {
  require(image.dim() == 2, ErrorKind::kShape, "predict_image: expected an (H, W) image");
  auto input = normalize_image(image).unsqueeze(0).unsqueeze(0);
  return predict_labels(tta_predict(fn, input, config))[0];
}

MetricAccumulator evaluate_samples(const LogitFn& fn, const std::vector<Sample>& samples, const TTAConfig& config) {
  require(!samples.empty(), ErrorKind::kData, "evaluate: empty test set");
  MetricAccumulator acc;
  for (const auto& s : samples) acc.add(s.mask, predict_image(fn, s.image, config));
  return acc;
}

MetricsReport evaluate_fold(const LogitFn& fn, const std::vector<Sample>& samples, const TTAConfig& config,
                            Averaging averaging) {
  return evaluate_samples(fn, samples, config).report(averaging);
}

MetricsReport evaluate_fold(SA2Net& model, const std::vector<Sample>& samples, const TTAConfig& config,
                            Averaging averaging) {
  return evaluate_fold(model_logits(model), samples, config, averaging);
}

}  // namespace sa2net
