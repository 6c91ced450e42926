// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sa2net {

inline constexpr int64_t kNumClasses = 4;
/// Foreground classes reported in metric tables (background excluded).
inline constexpr std::array<int64_t, 3> kForegroundClasses = {1, 2, 3};

std::string_view class_name(int64_t cls);

/// Confusion counts for one class binarisation.
struct BinaryCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t tn = 0;

  BinaryCounts& operator+=(const BinaryCounts& other);
  bool operator==(const BinaryCounts&) const = default;

  int64_t truth() const { return tp + fn; }
  int64_t predicted() const { return tp + fp; }

  // Percentages. Dice and IoU are 100 when the class is absent from both
  // masks.
  double dice() const;
  double iou() const;
  double accuracy() const;
};

/// Counts for `cls` between label maps of identical shape.
BinaryCounts count_binary(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls);

double dice_score(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls);
double iou_score(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls);
double pixel_accuracy(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls);

struct ClassMetrics {
  double dsc = 0.0;
  double iou = 0.0;
  double acc = 0.0;
};

enum class Averaging {
  kMicro,  // pooled counts over all images
  kMacro,  // per-image scores, averaged over images containing the class
};

struct MetricsReport {
  std::array<ClassMetrics, 3> per_class{};  // rib, thoracic, lump
  ClassMetrics average{};
  /// Spread across folds; set by summarize_folds.
  std::optional<std::array<ClassMetrics, 3>> per_class_std;
  std::optional<ClassMetrics> average_std;
  /// Number of images whose ground truth contains each foreground class.
  std::array<int64_t, 3> images_with_class{};
  int64_t images = 0;

  std::string to_text() const;
  /// Header `class,dsc,iou,acc` then rib, thoracic, lump, average rows.
  std::string to_csv() const;
  std::string to_json() const;
};

/// Mergeable per-image metric state.
class MetricAccumulator {
 public:
  /// Adds one (H, W) label map pair, or a (B, H, W) batch image by image.
  void add(const torch::Tensor& truth, const torch::Tensor& predicted);
  void merge(const MetricAccumulator& other);

  const std::array<BinaryCounts, kNumClasses>& pooled() const { return pooled_; }
  int64_t images() const { return static_cast<int64_t>(per_image_.size()); }

  MetricsReport report(Averaging averaging = Averaging::kMicro) const;

 private:
  std::array<BinaryCounts, kNumClasses> pooled_{};
  std::vector<std::array<BinaryCounts, kNumClasses>> per_image_;
};

MetricsReport evaluate(const torch::Tensor& truth_batch, const torch::Tensor& predicted_batch,
                       Averaging averaging = Averaging::kMicro);

/// Mean of the fold reports with the population standard deviation.
MetricsReport summarize_folds(std::span<const MetricsReport> folds);

}  // namespace sa2net
