// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "sa2net/error.hpp"
#include "sa2net/losses.hpp"
#include "sa2net/metrics.hpp"
#include "test_util.hpp"

namespace sa2net {
namespace {

using testing_util::random_labels;

// Pixel-loop cross entropy.
double ce_loop(const torch::Tensor& logits, const torch::Tensor& target, int64_t ignore = -1) {
  auto L = logits.accessor<double, 4>();
  auto T = target.accessor<int64_t, 3>();
  double total = 0;
  int64_t count = 0;
  for (int64_t b = 0; b < logits.size(0); ++b)
    for (int64_t y = 0; y < logits.size(2); ++y)
      for (int64_t x = 0; x < logits.size(3); ++x) {
        if (T[b][y][x] == ignore) continue;
        double z = 0;
        for (int64_t n = 0; n < logits.size(1); ++n) z += std::exp(L[b][n][y][x]);
        total += std::log(z) - L[b][T[b][y][x]][y][x];
        ++count;
      }
  return total / static_cast<double>(count);
}

TEST(Losses, DefaultWeights) {
  LossWeights w;
  EXPECT_DOUBLE_EQ(w.alpha, 1.0);
  EXPECT_DOUBLE_EQ(w.beta, 0.4);
  EXPECT_DOUBLE_EQ(w.gamma, 0.5);
  LossWeights bad;
  bad.beta = -0.1;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Losses, CrossEntropyMatchesLoop) {
  torch::manual_seed(0);
  auto logits = torch::randn({2, 4, 3, 5}, torch::kFloat64) * 3;
  auto target = torch::randint(0, 4, {2, 3, 5}, torch::kLong);
  EXPECT_NEAR(cross_entropy(logits, target).item<double>(), ce_loop(logits, target), 1e-12);
  target[0][1][1] = 2;
  target[1][2][4] = 2;
  EXPECT_NEAR(cross_entropy(logits, target, 2).item<double>(), ce_loop(logits, target, 2), 1e-12);
}

TEST(Losses, PerfectPredictionApproachesZero) {
  auto target = torch::randint(0, 4, {1, 4, 4}, torch::kLong);
  auto logits = torch::one_hot(target, 4).permute({0, 3, 1, 2}).to(torch::kFloat64) * 60.0;
  EXPECT_LT(cross_entropy(logits, target).item<double>(), 1e-20);
}

TEST(Losses, RejectsUnknownLabels) {
  auto logits = torch::randn({1, 4, 2, 2});
  auto target = torch::zeros({1, 2, 2}, torch::kLong);
  target[0][0][0] = 4;
  try {
    cross_entropy(logits, target);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
  EXPECT_THROW(cross_entropy(logits, torch::zeros({1, 3, 2}, torch::kLong)), Error);
}

TEST(Losses, MixingLossEqualsWeightedSum) {
  torch::manual_seed(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto p1 = torch::randn({2, 4, 4, 4}, torch::kFloat64);
    auto p2 = torch::randn({2, 4, 4, 4}, torch::kFloat64);
    auto t = torch::randint(0, 4, {2, 4, 4}, torch::kLong);
    const double expected = 1.0 * ce_loop(p1 + p2, t) + 0.4 * ce_loop(p1, t) + 0.5 * ce_loop(p2, t);
    EXPECT_NEAR(mixing_loss(p1, p2, t).item<double>(), expected, 1e-10);
  }
}

TEST(Losses, FeatureMixingEnumeratesSubsets) {
  torch::manual_seed(2);
  std::vector<torch::Tensor> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(torch::randn({1, 4, 3, 3}, torch::kFloat64));
  auto t = torch::randint(0, 4, {1, 3, 3}, torch::kLong);
  const std::vector<double> w = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  double expected = 0;
  for (int mask = 1; mask < 8; ++mask) {
    auto sum = torch::zeros_like(maps[0]);
    for (int i = 0; i < 3; ++i)
      if (mask & (1 << i)) sum = sum + maps[static_cast<size_t>(i)];
    expected += w[static_cast<size_t>(mask - 1)] * ce_loop(sum, t);
  }
  EXPECT_NEAR(feature_mixing_loss(maps, w, t).item<double>(), expected, 1e-10);
  EXPECT_THROW(feature_mixing_loss(maps, std::vector<double>{1.0, 2.0}, t), Error);
}

TEST(Losses, GradientFlowsToBothMaps) {
  auto p1 = torch::randn({1, 4, 2, 2}, torch::requires_grad());
  auto p2 = torch::randn({1, 4, 2, 2}, torch::requires_grad());
  mixing_loss(p1, p2, torch::zeros({1, 2, 2}, torch::kLong)).backward();
  EXPECT_GT(p1.grad().abs().sum().item<double>(), 0.0);
  EXPECT_GT(p2.grad().abs().sum().item<double>(), 0.0);
}

// ---------------------------------------------------------------------------

struct LoopCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

LoopCounts count_loop(const torch::Tensor& t, const torch::Tensor& p, int64_t cls) {
  LoopCounts c;
  auto T = t.accessor<int64_t, 2>();
  auto P = p.accessor<int64_t, 2>();
  for (int64_t y = 0; y < t.size(0); ++y)
    for (int64_t x = 0; x < t.size(1); ++x) {
      const bool a = T[y][x] == cls, b = P[y][x] == cls;
      c.tp += a && b;
      c.fp += !a && b;
      c.fn += a && !b;
      c.tn += !a && !b;
    }
  return c;
}

TEST(Metrics, MatchBruteForceOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto t = random_labels(rng, 8, 8);
    auto p = random_labels(rng, 8, 8);
    for (int64_t cls : kForegroundClasses) {
      const auto c = count_loop(t, p, cls);
      const double dsc = c.tp + c.fp + c.fn == 0 ? 100.0 : 200.0 * c.tp / (2.0 * c.tp + c.fp + c.fn);
      const double iou = c.tp + c.fp + c.fn == 0 ? 100.0 : 100.0 * c.tp / static_cast<double>(c.tp + c.fp + c.fn);
      const double acc = 100.0 * (c.tp + c.tn) / 64.0;
      EXPECT_EQ(dice_score(t, p, cls), dsc);
      EXPECT_EQ(iou_score(t, p, cls), iou);
      EXPECT_EQ(pixel_accuracy(t, p, cls), acc);
    }
  }
}

TEST(Metrics, DiceIouIdentity) {
  std::mt19937_64 rng(12);
  MetricAccumulator acc;
  for (int i = 0; i < 50; ++i) acc.add(random_labels(rng, 8, 8), random_labels(rng, 8, 8));
  for (int64_t cls : kForegroundClasses) {
    const auto& c = acc.pooled()[static_cast<size_t>(cls)];
    const double iou = c.iou() / 100.0;
    EXPECT_NEAR(c.dice() / 100.0, 2.0 * iou / (1.0 + iou), 1e-9);
  }
}

TEST(Metrics, EmptyClassScoresFull) {
  auto zeros = torch::zeros({4, 4}, torch::kLong);
  EXPECT_EQ(dice_score(zeros, zeros, 2), 100.0);
  EXPECT_EQ(iou_score(zeros, zeros, 2), 100.0);
  auto pred = zeros.clone();
  pred[0][0] = 2;
  EXPECT_EQ(dice_score(zeros, pred, 2), 0.0);
}

TEST(Metrics, MicroPoolsAndMacroAverages) {
  // Image A: rib perfectly found (4 px). Image B: rib 1 px, missed.
  auto ta = torch::zeros({4, 4}, torch::kLong);
  ta.index_put_({torch::indexing::Slice(0, 2), torch::indexing::Slice(0, 2)}, 1);
  auto tb = torch::zeros({4, 4}, torch::kLong);
  tb[3][3] = 1;
  MetricAccumulator acc;
  acc.add(ta, ta);
  acc.add(tb, torch::zeros({4, 4}, torch::kLong));
  const auto micro = acc.report(Averaging::kMicro);
  const auto macro = acc.report(Averaging::kMacro);
  EXPECT_NEAR(micro.per_class[0].dsc, 200.0 * 4 / (4 + 5), 1e-12);
  EXPECT_NEAR(macro.per_class[0].dsc, 50.0, 1e-12);
  EXPECT_EQ(micro.images_with_class[0], 2);
  // Classes absent everywhere count as perfect.
  EXPECT_EQ(micro.per_class[1].dsc, 100.0);
  EXPECT_NEAR(micro.average.dsc, (micro.per_class[0].dsc + 200.0) / 3.0, 1e-12);
}

TEST(Metrics, PooledCountsAreAdditive) {
  std::mt19937_64 rng(13);
  auto t1 = random_labels(rng, 8, 8), p1 = random_labels(rng, 8, 8);
  auto t2 = random_labels(rng, 8, 8), p2 = random_labels(rng, 8, 8);
  MetricAccumulator a, b, both;
  a.add(t1, p1);
  b.add(t2, p2);
  both.add(torch::stack({t1, t2}), torch::stack({p1, p2}));
  a.merge(b);
  for (int64_t cls = 0; cls < kNumClasses; ++cls) {
    EXPECT_EQ(a.pooled()[static_cast<size_t>(cls)], both.pooled()[static_cast<size_t>(cls)]);
  }
  EXPECT_EQ(both.images(), 2);
  EXPECT_THROW(both.add(t1, torch::zeros({8, 7}, torch::kLong)), Error);
}

TEST(Metrics, FoldSummaryUsesPopulationStd) {
  std::vector<MetricsReport> folds(3);
  const double values[] = {80.0, 85.0, 90.0};
  for (size_t i = 0; i < 3; ++i) {
    folds[i].per_class[0].dsc = values[i];
    folds[i].average.dsc = values[i];
  }
  const auto s = summarize_folds(folds);
  EXPECT_NEAR(s.per_class[0].dsc, 85.0, 1e-12);
  ASSERT_TRUE(s.per_class_std.has_value());
  EXPECT_NEAR((*s.per_class_std)[0].dsc, std::sqrt(50.0 / 3.0), 1e-9);
  EXPECT_NEAR(s.average_std->dsc, std::sqrt(50.0 / 3.0), 1e-9);
  EXPECT_THROW(summarize_folds({}), Error);
}

TEST(Metrics, Serialisation) {
  auto t = torch::zeros({2, 2}, torch::kLong);
  t[0][0] = 1;
  const auto r = evaluate(t.unsqueeze(0), t.unsqueeze(0));
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["per_class"]["rib"]["dsc"].get<double>(), 100.0);
  EXPECT_EQ(j["images"].get<int64_t>(), 1);
  EXPECT_EQ(r.to_csv().rfind("class,dsc,iou,acc\n", 0), 0u);
  EXPECT_NE(r.to_text().find("thoracic"), std::string::npos);
}

}  // namespace
}  // namespace sa2net
