// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sa2net/data.hpp"
#include "sa2net/inference.hpp"
#include "sa2net/losses.hpp"
#include "sa2net/metrics.hpp"
#include "sa2net/model.hpp"

namespace sa2net {

/// Where training and evaluation images come from.
struct DataConfig {
  std::string root;  // dataset directory; empty means synthetic phantoms
  int64_t phantom_count = 32;
  int64_t phantom_height = 256;
  int64_t phantom_width = 128;
  uint64_t phantom_seed = 0;
  int64_t folds = 3;
  uint64_t fold_seed = 0;
  /// Fold whose test subjects are held out by `train`; -1 trains on everything.
  int64_t fold = -1;

  void validate() const;
};

struct TrainConfig {
  int64_t iterations = 2000;
  int64_t batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double poly_power = 0.9;
  int64_t crop = 128;
  uint64_t seed = 0;
  int64_t log_every = 50;
  int64_t checkpoint_every = 0;  // 0 writes only the final checkpoint
  int64_t threads = 1;           // 0 keeps the library default
  bool deterministic = true;
  Averaging averaging = Averaging::kMicro;

  LossWeights loss_weights;
  AugmentOptions augment;  // crop_height / crop_width follow `crop`
  ModelConfig model;
  DataConfig data;
  TTAConfig tta;

  /// Small phantoms, 2000 iterations, 128 px crops, tiny backbone.
  static TrainConfig desk();
  /// 160k iterations, 512 px crops, lr 1e-4, 1024 x 256 phantoms.
  static TrainConfig full_scale();

  void validate() const;
  /// Fully resolved configuration, defaults included.
  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base = desk());
  static TrainConfig from_file(const std::filesystem::path& path);
};

/// lr * (1 - iter / iterations) ^ poly_power.
double poly_lr(int64_t iter, const TrainConfig& config);

/// Phantoms or the dataset on disk, as configured.
std::vector<Sample> load_samples(const DataConfig& data);

/// Applies thread count and deterministic-algorithm settings.
void configure_runtime(const TrainConfig& config);

struct StepRecord {
  int64_t iteration = 0;  // index of the step just taken (0-based)
  double lr = 0.0;
  double loss = 0.0;
};

class Trainer {
 public:
  Trainer(const TrainConfig& config, std::vector<Sample> samples);

  /// Resumes model, optimiser, iteration and loss trace from a checkpoint.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint, std::vector<Sample> samples);

  /// One optimisation step at the current iteration. Throws a training
  /// error on a non-finite loss.
  StepRecord step();
  /// Steps until `iteration()` reaches `end` (capped at config.iterations).
  void run(int64_t end, const std::function<void(const StepRecord&)>& on_step = {});

  /// The augmented (image, mask) batch consumed at `iteration`.
  std::pair<torch::Tensor, torch::Tensor> batch(int64_t iteration) const;
  torch::Tensor loss(const torch::Tensor& images, const torch::Tensor& masks);

  void save_checkpoint(const std::filesystem::path& path) const;

  int64_t iteration() const { return iteration_; }
  const std::vector<double>& loss_trace() const { return loss_trace_; }
  const TrainConfig& config() const { return config_; }
  SA2Net& model() { return model_; }
  torch::optim::AdamW& optimizer() { return *optimizer_; }

 private:
  TrainConfig config_;
  std::vector<Sample> samples_;
  SA2Net model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  int64_t iteration_ = 0;
  std::vector<double> loss_trace_;
};

struct Checkpoint {
  int64_t format_version = 0;
  int64_t iteration = 0;
  TrainConfig config;
  SA2Net model{nullptr};
  std::vector<double> loss_trace;
};

inline constexpr int64_t kCheckpointFormatVersion = 1;

/// Loads weights and metadata (not the optimiser state).
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CrossValidationResult {
  FoldSplit split;
  std::vector<MetricsReport> folds;
  MetricsReport summary;  // mean and population std over folds
};

/// Trains one model per fold on the remaining folds and evaluates it on the
/// held-out subjects with the configured TTA.
CrossValidationResult cross_validate(const TrainConfig& config, const std::vector<Sample>& samples,
                                     const std::function<void(int64_t fold, const StepRecord&)>& on_step = {});

/// Trains per the configuration and writes config.json, train_log.txt,
/// checkpoint.pt (and intermediate checkpoints) into `out_dir`. With
/// `resume` set, continues from that checkpoint using its stored config.
std::unique_ptr<Trainer> run_training(const TrainConfig& config, const std::filesystem::path& out_dir,
                                      std::ostream* progress = nullptr, const std::filesystem::path& resume = {});

}  // namespace sa2net
