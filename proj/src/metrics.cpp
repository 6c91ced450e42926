// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sa2net/error.hpp"

namespace sa2net {

std::string_view class_name(int64_t cls) {
  switch (cls) {
    case 0: return "background";
    case 1: return "rib";
    case 2: return "thoracic";
    case 3: return "lump";
    default: return "unknown";
  }
}

BinaryCounts& BinaryCounts::operator+=(const BinaryCounts& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

double BinaryCounts::dice() const {
  const int64_t denom = truth() + predicted();
  if (denom == 0) return 100.0;
  return 200.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double BinaryCounts::iou() const {
  const int64_t uni = tp + fp + fn;
  if (uni == 0) return 100.0;
  return 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
}

double BinaryCounts::accuracy() const {
  const int64_t total = tp + fp + fn + tn;
  if (total == 0) return 100.0;
  return 100.0 * static_cast<double>(tp + tn) / static_cast<double>(total);
}

BinaryCounts count_binary(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls) {
  require(truth.sizes() == predicted.sizes(), ErrorKind::kShape, "metrics: label maps differ in shape");
  auto t = truth.eq(cls);
  auto p = predicted.eq(cls);
  BinaryCounts c;
  c.tp = t.logical_and(p).sum().item<int64_t>();
  c.fp = p.logical_and(t.logical_not()).sum().item<int64_t>();
  c.fn = t.logical_and(p.logical_not()).sum().item<int64_t>();
  c.tn = truth.numel() - c.tp - c.fp - c.fn;
  return c;
}

double dice_score(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls) {
  return count_binary(truth, predicted, cls).dice();
}

double iou_score(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls) {
  return count_binary(truth, predicted, cls).iou();
}

double pixel_accuracy(const torch::Tensor& truth, const torch::Tensor& predicted, int64_t cls) {
  return count_binary(truth, predicted, cls).accuracy();
}

// ---------------------------------------------------------------------------

void MetricAccumulator::add(const torch::Tensor& truth, const torch::Tensor& predicted) {
  require(truth.sizes() == predicted.sizes(), ErrorKind::kShape, "metrics: label maps differ in shape");
  if (truth.dim() == 3) {
    for (int64_t i = 0; i < truth.size(0); ++i) add(truth[i], predicted[i]);
    return;
  }
  require(truth.dim() == 2, ErrorKind::kShape, "metrics: expected (H, W) or (B, H, W) label maps");
  std::array<BinaryCounts, kNumClasses> image{};
  for (int64_t cls = 0; cls < kNumClasses; ++cls) {
    image[cls] = count_binary(truth, predicted, cls);
    pooled_[cls] += image[cls];
  }
  per_image_.push_back(image);
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  for (int64_t cls = 0; cls < kNumClasses; ++cls) pooled_[cls] += other.pooled_[cls];
  per_image_.insert(per_image_.end(), other.per_image_.begin(), other.per_image_.end());
}

MetricsReport MetricAccumulator::report(Averaging averaging) const {
  MetricsReport r;
  r.images = images();
  for (size_t i = 0; i < kForegroundClasses.size(); ++i) {
    const auto cls = kForegroundClasses[i];
    int64_t present = 0;
    for (const auto& image : per_image_) present += image[cls].truth() > 0 ? 1 : 0;
    r.images_with_class[i] = present;

    ClassMetrics m;
    if (averaging == Averaging::kMicro) {
      m = {pooled_[cls].dice(), pooled_[cls].iou(), pooled_[cls].accuracy()};
    } else if (present == 0) {
      m = {100.0, 100.0, 100.0};
    } else {
      for (const auto& image : per_image_) {
        if (image[cls].truth() == 0) continue;
        m.dsc += image[cls].dice();
        m.iou += image[cls].iou();
        m.acc += image[cls].accuracy();
      }
      m.dsc /= static_cast<double>(present);
      m.iou /= static_cast<double>(present);
      m.acc /= static_cast<double>(present);
    }
    r.per_class[i] = m;
    r.average.dsc += m.dsc / 3.0;
    r.average.iou += m.iou / 3.0;
    r.average.acc += m.acc / 3.0;
  }
  return r;
}

MetricsReport evaluate(const torch::Tensor& truth_batch, const torch::Tensor& predicted_batch,
                       Averaging averaging) {
  require(truth_batch.numel() > 0, ErrorKind::kShape, "evaluate: empty batch");
  MetricAccumulator acc;
  acc.add(truth_batch, predicted_batch);
  return acc.report(averaging);
}

MetricsReport summarize_folds(std::span<const MetricsReport> folds) {
  require(!folds.empty(), ErrorKind::kConfig, "summarize_folds: no fold reports");
  const double n = static_cast<double>(folds.size());
  MetricsReport mean;
  std::array<ClassMetrics, 3> sq{};
  ClassMetrics sq_avg;
  auto accumulate = [](ClassMetrics& sum, ClassMetrics& sum_sq, const ClassMetrics& m) {
    sum.dsc += m.dsc;
    sum.iou += m.iou;
    sum.acc += m.acc;
    sum_sq.dsc += m.dsc * m.dsc;
    sum_sq.iou += m.iou * m.iou;
    sum_sq.acc += m.acc * m.acc;
  };
  for (const auto& fold : folds) {
    for (size_t i = 0; i < 3; ++i) {
      accumulate(mean.per_class[i], sq[i], fold.per_class[i]);
      mean.images_with_class[i] += fold.images_with_class[i];
    }
    accumulate(mean.average, sq_avg, fold.average);
    mean.images += fold.images;
  }
  auto finish = [n](ClassMetrics& sum, const ClassMetrics& sum_sq) {
    sum.dsc /= n;
    sum.iou /= n;
    sum.acc /= n;
    ClassMetrics sd;
    sd.dsc = std::sqrt(std::max(0.0, sum_sq.dsc / n - sum.dsc * sum.dsc));
    sd.iou = std::sqrt(std::max(0.0, sum_sq.iou / n - sum.iou * sum.iou));
    sd.acc = std::sqrt(std::max(0.0, sum_sq.acc / n - sum.acc * sum.acc));
    return sd;
  };
  std::array<ClassMetrics, 3> sd{};
  for (size_t i = 0; i < 3; ++i) sd[i] = finish(mean.per_class[i], sq[i]);
  mean.per_class_std = sd;
  mean.average_std = finish(mean.average, sq_avg);
  return mean;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

std::string fmt_cell(double value, std::optional<double> spread) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << value;
  if (spread) os << " +- " << *spread;
  return os.str();
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "images: " << images << "\n";
  os << std::left << std::setw(10) << "class" << std::setw(18) << "DSC" << std::setw(18) << "IoU"
     << std::setw(18) << "Acc" << "\n";
  auto row = [&](std::string_view name, const ClassMetrics& m, const std::optional<ClassMetrics>& sd) {
    os << std::left << std::setw(10) << name
       << std::setw(18) << fmt_cell(m.dsc, sd ? std::optional(sd->dsc) : std::nullopt)
       << std::setw(18) << fmt_cell(m.iou, sd ? std::optional(sd->iou) : std::nullopt)
       << std::setw(18) << fmt_cell(m.acc, sd ? std::optional(sd->acc) : std::nullopt) << "\n";
  };
  for (size_t i = 0; i < 3; ++i) {
    row(class_name(kForegroundClasses[i]), per_class[i],
        per_class_std ? std::optional((*per_class_std)[i]) : std::nullopt);
  }
  row("average", average, average_std);
  return os.str();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(10) << "class,dsc,iou,acc\n";
  for (size_t i = 0; i < 3; ++i) {
    os << class_name(kForegroundClasses[i]) << ',' << per_class[i].dsc << ',' << per_class[i].iou << ','
       << per_class[i].acc << '\n';
  }
  os << "average," << average.dsc << ',' << average.iou << ',' << average.acc << '\n';
  return os.str();
}

std::string MetricsReport::to_json() const {
  auto cell = [](const ClassMetrics& m) { return nlohmann::json{{"dsc", m.dsc}, {"iou", m.iou}, {"acc", m.acc}}; };
  nlohmann::json j;
  j["images"] = images;
  for (size_t i = 0; i < 3; ++i) {
    const std::string name(class_name(kForegroundClasses[i]));
    j["per_class"][name] = cell(per_class[i]);
    j["images_with_class"][name] = images_with_class[i];
    if (per_class_std) j["per_class_std"][name] = cell((*per_class_std)[i]);
  }
  j["average"] = cell(average);
  if (average_std) j["average_std"] = cell(*average_std);
  return j.dump(2);
}

}  // namespace sa2net
