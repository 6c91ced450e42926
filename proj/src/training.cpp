// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "sa2net/error.hpp"

namespace sa2net {

using nlohmann::json;

void DataConfig::validate() const {
  require(phantom_count >= 1, ErrorKind::kConfig, "data.phantom_count must be >= 1");
  require(phantom_height >= 64 && phantom_width >= 64, ErrorKind::kConfig, "phantom size must be at least 64x64");
  require(folds >= 2, ErrorKind::kConfig, "data.folds must be >= 2");
  require(fold >= -1 && fold < folds, ErrorKind::kConfig, "data.fold must be -1 or a valid fold index");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.iterations = 160000;
  c.lr = 1e-4;
  c.crop = 512;
  c.log_every = 500;
  c.checkpoint_every = 16000;
  c.data.phantom_height = 1024;
  c.data.phantom_width = 256;
  c.data.phantom_count = 109;
  return c;
}

void TrainConfig::validate() const {
  require(iterations >= 1, ErrorKind::kConfig, "iterations must be >= 1");
  require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  require(std::isfinite(lr) && lr > 0.0, ErrorKind::kConfig, "lr must be > 0");
  require(weight_decay >= 0.0, ErrorKind::kConfig, "weight_decay must be >= 0");
  require(0.0 <= adam_beta1 && adam_beta1 < 1.0 && 0.0 <= adam_beta2 && adam_beta2 < 1.0, ErrorKind::kConfig,
          "adam betas must lie in [0, 1)");
  require(poly_power >= 0.0, ErrorKind::kConfig, "poly_power must be >= 0");
  require(crop >= 32 && crop % 32 == 0, ErrorKind::kConfig, "crop must be a positive multiple of 32");
  require(log_every >= 1, ErrorKind::kConfig, "log_every must be >= 1");
  require(checkpoint_every >= 0, ErrorKind::kConfig, "checkpoint_every must be >= 0");
  require(threads >= 0, ErrorKind::kConfig, "threads must be >= 0");
  loss_weights.validate();
  augment.validate();
  model.validate();
  data.validate();
  tta.validate();
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::string to_string(ModelVariant v) { return v == ModelVariant::kFull ? "full" : "baseline"; }
std::string to_string(SamHead h) { return h == SamHead::kConv ? "conv" : "mask_dot"; }
std::string to_string(Averaging a) { return a == Averaging::kMicro ? "micro" : "macro"; }

template <typename Enum>
Enum parse_enum(const json& j, std::initializer_list<std::pair<const char*, Enum>> options, const char* key) {
  const auto text = j.get<std::string>();
  for (const auto& [name, value] : options) {
    if (text == name) return value;
  }
  fail(ErrorKind::kConfig, std::string("invalid value '") + text + "' for " + key);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  require(j.is_object(), ErrorKind::kConfig, "config section '" + section + "' must be an object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      fail(ErrorKind::kConfig, "unknown config key '" + (section.empty() ? "" : section + ".") + item.key() + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json TrainConfig::to_json() const {
  json j;
  j["iterations"] = iterations;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["poly_power"] = poly_power;
  j["crop"] = crop;
  j["seed"] = seed;
  j["log_every"] = log_every;
  j["checkpoint_every"] = checkpoint_every;
  j["threads"] = threads;
  j["deterministic"] = deterministic;
  j["averaging"] = to_string(averaging);
  j["loss_weights"] = {{"alpha", loss_weights.alpha}, {"beta", loss_weights.beta}, {"gamma", loss_weights.gamma}};
  j["augment"] = {{"scale_min", augment.scale_min},
                  {"scale_max", augment.scale_max},
                  {"flip_probability", augment.flip_probability}};
  j["model"] = {{"backbone", model.backbone_name},
                {"in_channels", model.in_channels},
                {"stage_channels", model.stage_channels},
                {"hidden_dim", model.hidden_dim},
                {"mask_dim", model.mask_dim},
                {"decoder_layers", model.decoder_layers},
                {"decoder_heads", model.decoder_heads},
                {"num_classes", model.num_classes},
                {"reduction_factor", model.reduction_factor},
                {"fusion_channels", model.fusion_channels},
                {"variant", to_string(model.variant)},
                {"sam_residual", model.sam_residual},
                {"sam_head", to_string(model.sam_head)}};
  j["data"] = {{"root", data.root},
               {"phantom_count", data.phantom_count},
               {"phantom_height", data.phantom_height},
               {"phantom_width", data.phantom_width},
               {"phantom_seed", data.phantom_seed},
               {"folds", data.folds},
               {"fold_seed", data.fold_seed},
               {"fold", data.fold}};
  j["tta"] = {{"scales", tta.scales}, {"flip", tta.flip}, {"tile", tta.tile}, {"tile_overlap", tta.tile_overlap}};
  return j;
}

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    check_keys(j,
               {"iterations", "batch_size", "lr", "weight_decay", "adam_beta1", "adam_beta2", "poly_power", "crop",
                "seed", "log_every", "checkpoint_every", "threads", "deterministic", "averaging", "loss_weights",
                "augment", "model", "data", "tta"},
               "");
    read(j, "iterations", c.iterations);
    read(j, "batch_size", c.batch_size);
    read(j, "lr", c.lr);
    read(j, "weight_decay", c.weight_decay);
    read(j, "adam_beta1", c.adam_beta1);
    read(j, "adam_beta2", c.adam_beta2);
    read(j, "poly_power", c.poly_power);
    read(j, "crop", c.crop);
    read(j, "seed", c.seed);
    read(j, "log_every", c.log_every);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "threads", c.threads);
    read(j, "deterministic", c.deterministic);
    if (j.contains("averaging")) {
      c.averaging = parse_enum<Averaging>(j["averaging"], {{"micro", Averaging::kMicro}, {"macro", Averaging::kMacro}},
                                          "averaging");
    }
    if (j.contains("loss_weights")) {
      const auto& s = j["loss_weights"];
      check_keys(s, {"alpha", "beta", "gamma"}, "loss_weights");
      read(s, "alpha", c.loss_weights.alpha);
      read(s, "beta", c.loss_weights.beta);
      read(s, "gamma", c.loss_weights.gamma);
    }
    if (j.contains("augment")) {
      const auto& s = j["augment"];
      check_keys(s, {"scale_min", "scale_max", "flip_probability"}, "augment");
      read(s, "scale_min", c.augment.scale_min);
      read(s, "scale_max", c.augment.scale_max);
      read(s, "flip_probability", c.augment.flip_probability);
    }
    if (j.contains("model")) {
      const auto& s = j["model"];
      check_keys(s,
                 {"backbone", "in_channels", "stage_channels", "hidden_dim", "mask_dim", "decoder_layers",
                  "decoder_heads", "num_classes", "reduction_factor", "fusion_channels", "variant", "sam_residual",
                  "sam_head"},
                 "model");
      read(s, "backbone", c.model.backbone_name);
      read(s, "in_channels", c.model.in_channels);
      read(s, "stage_channels", c.model.stage_channels);
      read(s, "hidden_dim", c.model.hidden_dim);
      read(s, "mask_dim", c.model.mask_dim);
      read(s, "decoder_layers", c.model.decoder_layers);
      read(s, "decoder_heads", c.model.decoder_heads);
      read(s, "num_classes", c.model.num_classes);
      read(s, "reduction_factor", c.model.reduction_factor);
      read(s, "fusion_channels", c.model.fusion_channels);
      read(s, "sam_residual", c.model.sam_residual);
      if (s.contains("variant")) {
        c.model.variant = parse_enum<ModelVariant>(
            s["variant"], {{"full", ModelVariant::kFull}, {"baseline", ModelVariant::kBaseline}}, "model.variant");
      }
      if (s.contains("sam_head")) {
        c.model.sam_head = parse_enum<SamHead>(s["sam_head"], {{"conv", SamHead::kConv}, {"mask_dot", SamHead::kMaskDot}},
                                               "model.sam_head");
      }
    }
    if (j.contains("data")) {
      const auto& s = j["data"];
      check_keys(s, {"root", "phantom_count", "phantom_height", "phantom_width", "phantom_seed", "folds", "fold_seed",
                     "fold"},
                 "data");
      read(s, "root", c.data.root);
      read(s, "phantom_count", c.data.phantom_count);
      read(s, "phantom_height", c.data.phantom_height);
      read(s, "phantom_width", c.data.phantom_width);
      read(s, "phantom_seed", c.data.phantom_seed);
      read(s, "folds", c.data.folds);
      read(s, "fold_seed", c.data.fold_seed);
      read(s, "fold", c.data.fold);
    }
    if (j.contains("tta")) {
      const auto& s = j["tta"];
      check_keys(s, {"scales", "flip", "tile", "tile_overlap"}, "tta");
      read(s, "scales", c.tta.scales);
      read(s, "flip", c.tta.flip);
      read(s, "tile", c.tta.tile);
      read(s, "tile_overlap", c.tta.tile_overlap);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed config: ") + e.what());
  }
  c.augment.crop_height = c.crop;
  c.augment.crop_width = c.crop;
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, "cannot parse '" + path.string() + "': " + e.what());
  }
  TrainConfig base = desk();
  if (j.contains("preset")) {
    const auto preset = j["preset"].get<std::string>();
    if (preset == "full") {
      base = full_scale();
    } else if (preset != "desk") {
      fail(ErrorKind::kConfig, "unknown preset '" + preset + "' (expected desk or full)");
    }
    j.erase("preset");
  }
  return from_json(j, base);
}

double poly_lr(int64_t iter, const TrainConfig& config) {
  require(0 <= iter && iter <= config.iterations, ErrorKind::kConfig, "poly_lr: iteration outside [0, iterations]");
  const double progress = static_cast<double>(iter) / static_cast<double>(config.iterations);
  return config.lr * std::pow(1.0 - progress, config.poly_power);
}

std::vector<Sample> load_samples(const DataConfig& data) {
  data.validate();
  if (!data.root.empty()) return load_dataset(data.root);
  std::vector<Sample> samples;
  for (int64_t i = 0; i < data.phantom_count; ++i) {
    samples.push_back(generate_phantom(data.phantom_seed + static_cast<uint64_t>(i), data.phantom_height,
                                       data.phantom_width));
  }
  return samples;
}

void configure_runtime(const TrainConfig& config) {
  if (config.threads > 0) torch::set_num_threads(static_cast<int>(config.threads));
  at::globalContext().setDeterministicAlgorithms(config.deterministic, /*warn_only=*/false);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const TrainConfig& config, std::vector<Sample> samples)
    : config_(config), samples_(std::move(samples)) {
  config_.augment.crop_height = config_.crop;
  config_.augment.crop_width = config_.crop;
  config_.validate();
  require(!samples_.empty(), ErrorKind::kData, "training set is empty");
  for (const auto& s : samples_) s.validate();
  configure_runtime(config_);
  torch::manual_seed(config_.seed);
  model_ = SA2Net(config_.model);
  optimizer_ = std::make_unique<torch::optim::AdamW>(
      model_->parameters(), torch::optim::AdamWOptions(config_.lr)
                                .betas({config_.adam_beta1, config_.adam_beta2})
                                .weight_decay(config_.weight_decay));
}

std::pair<torch::Tensor, torch::Tensor> Trainer::batch(int64_t iteration) const {
  std::mt19937_64 pick(derive_seed(config_.seed, static_cast<uint64_t>(iteration)));
  std::uniform_int_distribution<size_t> index(0, samples_.size() - 1);
  std::vector<Sample> chosen;
  for (int64_t slot = 0; slot < config_.batch_size; ++slot) {
    std::mt19937_64 rng(derive_seed(config_.seed, static_cast<uint64_t>(iteration), static_cast<uint64_t>(slot) + 1));
    chosen.push_back(augment(samples_[index(pick)], config_.augment, rng));
  }
  return collate(chosen);
}

torch::Tensor Trainer::loss(const torch::Tensor& images, const torch::Tensor& masks) {
  const auto pair = model_->forward(images);
  if (!pair.sam.defined()) return cross_entropy(pair.attention, masks);
  return mixing_loss(pair.sam, pair.attention, masks, config_.loss_weights);
}

StepRecord Trainer::step() {
  require(iteration_ < config_.iterations, ErrorKind::kTraining, "training already finished");
  StepRecord record;
  record.iteration = iteration_;
  record.lr = poly_lr(iteration_, config_);
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(record.lr);
  }
  model_->train();
  auto [images, masks] = batch(iteration_);
  optimizer_->zero_grad();
  auto value = loss(images, masks);
  record.loss = value.item<double>();
  if (!std::isfinite(record.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss (" << record.loss << ") at iteration " << iteration_;
    fail(ErrorKind::kTraining, msg.str());
  }
  value.backward();
  optimizer_->step();
  loss_trace_.push_back(record.loss);
  ++iteration_;
  return record;
}

void Trainer::run(int64_t end, const std::function<void(const StepRecord&)>& on_step) {
  end = std::min(end, config_.iterations);
  while (iteration_ < end) {
    const auto record = step();
    if (on_step) on_step(record);
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive archive;
  archive.write("format_version", torch::tensor(kCheckpointFormatVersion));
  archive.write("iteration", torch::tensor(iteration_));
  archive.write("config", c10::IValue(config_.to_json().dump()));
  torch::serialize::OutputArchive weights;
  model_->save(weights);
  archive.write("model", weights);
  torch::serialize::OutputArchive optim;
  optimizer_->save(optim);
  archive.write("optimizer", optim);
  archive.write("loss_trace", torch::tensor(loss_trace_, torch::kFloat64));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorKind::kIo, "cannot write checkpoint '" + path.string() + "': " + e.what_without_backtrace());
  }
}

namespace {

struct RawCheckpoint {
  torch::serialize::InputArchive archive;
  Checkpoint meta;
};

void read_checkpoint(const std::filesystem::path& path, RawCheckpoint& raw) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kIo, "checkpoint '" + path.string() + "' does not exist");
  try {
    raw.archive.load_from(path.string());
    torch::Tensor t;
    raw.archive.read("format_version", t);
    raw.meta.format_version = t.item<int64_t>();
    if (raw.meta.format_version != kCheckpointFormatVersion) {
      fail(ErrorKind::kData, "checkpoint '" + path.string() + "' has format_version " +
                                 std::to_string(raw.meta.format_version) + ", expected " +
                                 std::to_string(kCheckpointFormatVersion));
    }
    torch::Tensor iteration;
    raw.archive.read("iteration", iteration);
    raw.meta.iteration = iteration.item<int64_t>();
    c10::IValue config;
    raw.archive.read("config", config);
    raw.meta.config = TrainConfig::from_json(json::parse(config.toStringRef()), TrainConfig::desk());
    torch::Tensor trace;
    raw.archive.read("loss_trace", trace);
    trace = trace.to(torch::kFloat64).contiguous();
    raw.meta.loss_trace.assign(trace.data_ptr<double>(), trace.data_ptr<double>() + trace.numel());
  } catch (const c10::Error& e) {
    fail(ErrorKind::kData, "cannot read checkpoint '" + path.string() + "': " + e.what_without_backtrace());
  }
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw;
  read_checkpoint(path, raw);
  raw.meta.model = SA2Net(raw.meta.config.model);
  try {
    torch::serialize::InputArchive weights;
    raw.archive.read("model", weights);
    raw.meta.model->load(weights);
  } catch (const c10::Error& e) {
    fail(ErrorKind::kData, "checkpoint '" + path.string() + "' does not match its model: " + e.what_without_backtrace());
  }
  return raw.meta;
}

std::unique_ptr<Trainer> Trainer::resume(const std::filesystem::path& checkpoint, std::vector<Sample> samples) {
  RawCheckpoint raw;
  read_checkpoint(checkpoint, raw);
  auto trainer = std::make_unique<Trainer>(raw.meta.config, std::move(samples));
  try {
    torch::serialize::InputArchive weights, optim;
    raw.archive.read("model", weights);
    trainer->model_->load(weights);
    raw.archive.read("optimizer", optim);
    trainer->optimizer_->load(optim);
  } catch (const c10::Error& e) {
    fail(ErrorKind::kData, "checkpoint '" + checkpoint.string() + "' cannot be resumed: " + e.what_without_backtrace());
  }
  trainer->iteration_ = raw.meta.iteration;
  trainer->loss_trace_ = raw.meta.loss_trace;
  return trainer;
}

// ---------------------------------------------------------------------------
// Drivers

CrossValidationResult cross_validate(const TrainConfig& config, const std::vector<Sample>& samples,
                                     const std::function<void(int64_t, const StepRecord&)>& on_step) {
  config.validate();
  CrossValidationResult result;
  result.split = make_folds(subject_ids(samples), config.data.fold_seed, config.data.folds);
  for (size_t k = 0; k < result.split.size(); ++k) {
    Trainer trainer(config, select_subjects(samples, result.split.train_subjects(k)));
    trainer.run(config.iterations, [&](const StepRecord& r) {
      if (on_step) on_step(static_cast<int64_t>(k), r);
    });
    result.folds.push_back(
        evaluate_fold(trainer.model(), select_subjects(samples, result.split.test_subjects(k)), config.tta,
                      config.averaging));
  }
  result.summary = summarize_folds(result.folds);
  return result;
}

std::unique_ptr<Trainer> run_training(const TrainConfig& requested, const std::filesystem::path& out_dir,
                                      std::ostream* progress, const std::filesystem::path& resume) {
  const TrainConfig config = resume.empty() ? requested : load_checkpoint(resume).config;
  config.validate();
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config.json");
    echo << config.to_json().dump(2) << "\n";
  }
  auto samples = load_samples(config.data);
  require(!samples.empty(), ErrorKind::kData, "no training samples");
  if (config.data.fold >= 0) {
    const auto split = make_folds(subject_ids(samples), config.data.fold_seed, config.data.folds);
    samples = select_subjects(samples, split.train_subjects(static_cast<size_t>(config.data.fold)));
  }
  auto trainer = resume.empty() ? std::make_unique<Trainer>(config, std::move(samples))
                                 : Trainer::resume(resume, std::move(samples));
  std::ofstream log(out_dir / "train_log.txt", resume.empty() ? std::ios::trunc : std::ios::app);
  log << std::setprecision(10);
  try {
    trainer->run(config.iterations, [&](const StepRecord& r) {
      log << "iter " << r.iteration << " lr " << r.lr << " loss " << r.loss << "\n";
      const auto done = r.iteration + 1;
      if (progress && (done % config.log_every == 0 || done == config.iterations)) {
        *progress << "iter " << done << "/" << config.iterations << " lr " << std::scientific << std::setprecision(3)
                  << r.lr << std::defaultfloat << " loss " << std::fixed << std::setprecision(4) << r.loss
                  << std::defaultfloat << std::endl;
      }
      if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations) {
        trainer->save_checkpoint(out_dir / ("checkpoint_" + std::to_string(done) + ".pt"));
      }
    });
  } catch (const Error& e) {
    log << "abort: " << e.what() << "\n";
    throw;
  }
  trainer->save_checkpoint(out_dir / "checkpoint.pt");
  return trainer;
}

}  // namespace sa2net
