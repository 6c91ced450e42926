// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <algorithm>

#include "sa2net/error.hpp"
#include "sa2net/model.hpp"

namespace sa2net {
namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.decoder_layers = 2;
  return cfg;
}

TEST(Model, FullVariantProducesTwoMaps) {
  torch::manual_seed(0);
  SA2Net model(small_config());
  auto out = model->forward(torch::randn({2, 1, 64, 96}));
  EXPECT_EQ(out.sam.sizes(), (std::vector<int64_t>{2, 4, 64, 96}));
  EXPECT_EQ(out.attention.sizes(), (std::vector<int64_t>{2, 4, 64, 96}));
  EXPECT_TRUE(torch::equal(aggregate_predictions(out), out.sam + out.attention));
  EXPECT_TRUE(torch::isfinite(out.sam).all().item<bool>());
}

TEST(Model, BaselineHasSingleHead) {
  auto cfg = small_config();
  cfg.variant = ModelVariant::kBaseline;
  SA2Net model(cfg);
  auto out = model->forward(torch::randn({1, 1, 32, 64}));
  EXPECT_FALSE(out.sam.defined());
  EXPECT_EQ(out.attention.sizes(), (std::vector<int64_t>{1, 4, 32, 64}));
  EXPECT_TRUE(torch::equal(aggregate_predictions(out), out.attention));
  EXPECT_TRUE(model->sam.is_empty());

  SA2Net full(small_config());
  auto count = [](torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
  };
  EXPECT_LT(count(*model), count(*full));
}

TEST(Model, MaskDotHead) {
  auto cfg = small_config();
  cfg.sam_head = SamHead::kMaskDot;
  SA2Net model(cfg);
  auto out = model->forward(torch::randn({1, 1, 64, 64}));
  EXPECT_EQ(out.sam.sizes(), out.attention.sizes());
}

TEST(Model, RejectsSizesNotDivisibleBy32) {
  SA2Net model(small_config());
  try {
    model->forward(torch::randn({1, 1, 100, 64}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
    EXPECT_NE(std::string(e.what()).find("128x64"), std::string::npos) << e.what();
  }
  EXPECT_THROW(model->forward(torch::randn({1, 1, 16, 16})), Error);
  EXPECT_THROW(model->forward(torch::randn({1, 3, 64, 64})), Error);
}

TEST(Model, ConfigValidation) {
  auto cfg = small_config();
  cfg.hidden_dim = 30;
  cfg.mask_dim = 30;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config();
  cfg.mask_dim = 16;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config();
  cfg.decoder_layers = 0;
  EXPECT_THROW(SA2Net{cfg}, Error);
}

TEST(BackboneRegistry, UnknownAndExternalNames) {
  auto cfg = small_config();
  cfg.backbone_name = "nonexistent";
  EXPECT_THROW(SA2Net{cfg}, Error);
  cfg.backbone_name = "external";
  try {
    SA2Net model(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("register"), std::string::npos);
  }
  const auto names = BackboneRegistry::instance().names();
  EXPECT_NE(std::find(names.begin(), names.end(), "tiny_conv"), names.end());
}

TEST(BackboneRegistry, CustomFactory) {
  BackboneRegistry::instance().add("test_tiny", [](const ModelConfig& c) {
    return std::make_shared<TinyConvBackboneImpl>(c.in_channels, std::array<int64_t, 4>{8, 8, 16, 16});
  });
  auto cfg = small_config();
  cfg.backbone_name = "test_tiny";
  SA2Net model(cfg);
  EXPECT_EQ(model->backbone->channels()[3], 16);
  EXPECT_EQ(model->forward(torch::randn({1, 1, 32, 32})).sam.size(1), 4);
}

TEST(Backbone, StageStrides) {
  TinyConvBackboneImpl backbone(1, {16, 32, 64, 128});
  auto out = backbone.forward(torch::randn({1, 1, 64, 128}));
  ASSERT_EQ(out.size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    const int64_t stride = int64_t{4} << i;
    EXPECT_EQ(out[i].size(2), 64 / stride);
    EXPECT_EQ(out[i].size(3), 128 / stride);
  }
}

TEST(PredictLabels, ArgmaxWithLowestIndexOnTies) {
  auto logits = torch::zeros({1, 4, 1, 3});
  logits[0][2][0][1] = 1.0;
  logits[0][1][0][2] = 5.0;
  logits[0][3][0][2] = 5.0;
  auto labels = predict_labels(logits);
  EXPECT_EQ(labels[0][0][0].item<int64_t>(), 0);
  EXPECT_EQ(labels[0][0][1].item<int64_t>(), 2);
  EXPECT_EQ(labels[0][0][2].item<int64_t>(), 1);
  EXPECT_THROW(predict_labels(torch::zeros({4, 2, 2})), Error);
}

TEST(Aggregate, ShapeMismatch) {
  PredictionPair pair{torch::zeros({1, 4, 2, 2}), torch::zeros({1, 4, 2, 3})};
  EXPECT_THROW(aggregate_predictions(pair), Error);
  EXPECT_THROW(aggregate_predictions(PredictionPair{}), Error);
}

TEST(Model, BackwardReachesEveryBranch) {
  torch::manual_seed(3);
  SA2Net model(small_config());
  auto out = model->forward(torch::randn({1, 1, 64, 64}));
  (out.sam.square().mean() + out.attention.square().mean()).backward();
  for (const auto& item : model->named_parameters()) {
    ASSERT_TRUE(item.value().grad().defined()) << item.key();
  }
  EXPECT_GT(model->sacsam->parameters().front().grad().abs().sum().item<double>(), 0.0);
}

}  // namespace
}  // namespace sa2net
