// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

// Command-line front end: generate-data, train, eval, predict, gradcheck,
// crossval.

#include <CLI11/CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sa2net/data.hpp"
#include "sa2net/error.hpp"
#include "sa2net/gradcheck.hpp"
#include "sa2net/image_io.hpp"
#include "sa2net/inference.hpp"
#include "sa2net/training.hpp"

namespace fs = std::filesystem;
using namespace sa2net;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kShape: return 3;
    case ErrorKind::kData: return 4;
    case ErrorKind::kIo: return 5;
    case ErrorKind::kTraining: return 6;
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
}

void write_reports(const fs::path& dir, const MetricsReport& report) {
  write_text(dir / "metrics.json", report.to_json() + "\n");
  write_text(dir / "metrics.csv", report.to_csv());
  write_text(dir / "metrics.txt", report.to_text());
}

std::vector<size_t> parse_folds(const std::string& text, size_t count) {
  std::vector<size_t> folds;
  if (text == "all") {
    for (size_t i = 0; i < count; ++i) folds.push_back(i);
    return folds;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t pos = 0;
    long value = -1;
    try {
      value = std::stol(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || value < 0 || static_cast<size_t>(value) >= count) {
      fail(ErrorKind::kConfig, "invalid fold '" + item + "' (expected 0.." + std::to_string(count - 1) + " or all)");
    }
    folds.push_back(static_cast<size_t>(value));
  }
  require(!folds.empty(), ErrorKind::kConfig, "no folds selected");
  return folds;
}

struct TtaFlags {
  std::vector<double> scales;
  bool no_flip = false;
  bool no_tta = false;
  int64_t tile = -1;

  void add(CLI::App* cmd) {
    cmd->add_option("--scales", scales, "TTA scales, comma separated (default from config)")->delimiter(',');
    cmd->add_flag("--no-flip", no_flip, "Disable flip TTA");
    cmd->add_flag("--no-tta", no_tta, "Single pass at scale 1.0 without flip");
    cmd->add_option("--tile", tile, "Sliding-window size (0 = whole image)");
  }

  TTAConfig apply(TTAConfig cfg) const {
    if (!scales.empty()) cfg.scales = scales;
    if (no_flip) cfg.flip = false;
    if (no_tta) {
      cfg.scales = {1.0};
      cfg.flip = false;
    }
    if (tile >= 0) cfg.tile = tile;
    cfg.validate();
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"sa2net: spine bone-feature segmentation"};
  app.require_subcommand(1);
  int64_t threads = 0;
  app.add_option("--threads", threads, "Intra-op threads (0 = keep the configured value)");

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Write synthetic phantoms in dataset layout");
  uint64_t gen_seed = 0;
  int64_t gen_count = 32, gen_height = 256, gen_width = 128;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "First phantom seed");
  gen->add_option("--count", gen_count, "Number of phantoms (one subject each)")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output dataset root")->required();
  gen->add_option("--height", gen_height, "Phantom height")->check(CLI::Range(64, 1 << 14));
  gen->add_option("--width", gen_width, "Phantom width")->check(CLI::Range(64, 1 << 14));

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_config, train_out, train_resume;
  train->add_option("--config", train_config, "JSON config (omit for the desk profile)");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--resume", train_resume, "Checkpoint to resume from");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with TTA");
  std::string eval_ckpt, eval_data, eval_folds, eval_out;
  bool eval_macro = false;
  TtaFlags eval_tta;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset root (default: data section of the checkpoint config)");
  eval->add_option("--folds", eval_folds,
                   "Comma-separated fold indices or 'all' whose test subjects are scored "
                   "(default: the held-out fold of the checkpoint, else every sample)");
  eval->add_option("--out", eval_out, "Directory for metrics.json / metrics.csv / metrics.txt");
  eval->add_flag("--macro", eval_macro, "Average per image instead of pooling counts");
  eval_tta.add(eval);

  // predict
  auto* predict = app.add_subcommand("predict", "Segment one image");
  std::string pred_ckpt, pred_image, pred_overlay, pred_labels;
  TtaFlags pred_tta;
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict->add_option("--image", pred_image, "8-bit grayscale PNG")->required();
  predict->add_option("--overlay-out", pred_overlay, "Colour overlay PNG");
  predict->add_option("--labels-out", pred_labels, "Palette label PNG");
  pred_tta.add(predict);

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::string grad_component = "all";
  uint64_t grad_seed = 0;
  grad->add_option("--component", grad_component, "gca, sca, sacsam, decoder_block, affinity, full or all");
  grad->add_option("--seed", grad_seed, "Seed");
  GradcheckOptions grad_options;
  grad->add_option("--step", grad_options.step, "Central-difference step")->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", grad_options.tolerance, "Relative-error threshold")->check(CLI::PositiveNumber);
  grad->add_option("--floor", grad_options.floor, "Relative-error denominator floor")->check(CLI::PositiveNumber);

  // crossval
  auto* cv = app.add_subcommand("crossval", "Train and evaluate every fold");
  std::string cv_config, cv_out;
  cv->add_option("--config", cv_config, "JSON config (omit for the desk profile)");
  cv->add_option("--out", cv_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (threads > 0) torch::set_num_threads(static_cast<int>(threads));

  if (*gen) {
    fs::create_directories(gen_out);
    std::vector<Sample> samples;
    for (int64_t i = 0; i < gen_count; ++i) {
      samples.push_back(generate_phantom(gen_seed + static_cast<uint64_t>(i), gen_height, gen_width));
    }
    write_dataset(gen_out, samples);
    std::cout << "wrote " << samples.size() << " phantoms to " << gen_out << "\n";
    return 0;
  }

  if (*train) {
    auto config = train_config.empty() ? TrainConfig::desk() : TrainConfig::from_file(train_config);
    if (threads > 0) config.threads = threads;
    auto trainer = run_training(config, train_out, &std::cout, train_resume);
    std::cout << "checkpoint: " << (fs::path(train_out) / "checkpoint.pt").string() << "\n";
    return 0;
  }

  if (*eval) {
    auto ckpt = load_checkpoint(eval_ckpt);
    auto config = ckpt.config;
    if (threads > 0) config.threads = threads;
    configure_runtime(config);
    if (!eval_data.empty()) config.data.root = eval_data;
    const auto tta = eval_tta.apply(config.tta);
    auto samples = load_samples(config.data);
    require(!samples.empty(), ErrorKind::kData, "no samples to evaluate");
    std::vector<Sample> selected = samples;
    if (!eval_folds.empty() || config.data.fold >= 0) {
      const auto split = make_folds(subject_ids(samples), config.data.fold_seed, config.data.folds);
      const auto folds = eval_folds.empty() ? std::vector<size_t>{static_cast<size_t>(config.data.fold)}
                                            : parse_folds(eval_folds, split.size());
      std::vector<std::string> ids;
      for (const auto k : folds) {
        const auto& test = split.test_subjects(k);
        ids.insert(ids.end(), test.begin(), test.end());
      }
      selected = select_subjects(samples, ids);
    }
    const auto report = evaluate_fold(ckpt.model, selected, tta, eval_macro ? Averaging::kMacro : config.averaging);
    std::cout << report.to_text();
    if (!eval_out.empty()) {
      write_reports(eval_out, report);
      auto echo = config.to_json();
      echo["tta"]["scales"] = tta.scales;
      echo["tta"]["flip"] = tta.flip;
      echo["tta"]["tile"] = tta.tile;
      write_text(fs::path(eval_out) / "config.json", echo.dump(2) + "\n");
    }
    return 0;
  }

  if (*predict) {
    auto ckpt = load_checkpoint(pred_ckpt);
    if (threads > 0) ckpt.config.threads = threads;
    configure_runtime(ckpt.config);
    const auto tta = pred_tta.apply(ckpt.config.tta);
    const auto image = read_png_u8(pred_image).to(torch::kFloat32) / 255.0;
    const auto labels = predict_image(model_logits(ckpt.model), image, tta);
    if (!pred_overlay.empty()) write_png_rgb(pred_overlay, label_overlay(image, labels));
    if (!pred_labels.empty()) write_png_palette(pred_labels, labels.to(torch::kUInt8), label_palette());
    for (int64_t cls = 1; cls < kNumClasses; ++cls) {
      std::cout << class_name(cls) << ": " << labels.eq(cls).sum().item<int64_t>() << " px\n";
    }
    return 0;
  }

  if (*grad) {
    std::vector<GradcheckComponent> components;
    if (grad_component == "all") {
      components = all_gradcheck_components();
    } else {
      components.push_back(parse_gradcheck_component(grad_component));
    }
    bool ok = true;
    for (const auto c : components) {
      const auto report = gradcheck(c, grad_seed, grad_options);
      std::cout << report.to_text() << std::endl;
      ok = ok && report.passed;
    }
    return ok ? 0 : 7;
  }

  if (*cv) {
    auto config = cv_config.empty() ? TrainConfig::desk() : TrainConfig::from_file(cv_config);
    if (threads > 0) config.threads = threads;
    fs::create_directories(cv_out);
    write_text(fs::path(cv_out) / "config.json", config.to_json().dump(2) + "\n");
    const auto samples = load_samples(config.data);
    const auto result = cross_validate(config, samples, [&](int64_t fold, const StepRecord& r) {
      const auto done = r.iteration + 1;
      if (done % config.log_every == 0 || done == config.iterations) {
        std::cout << "fold " << fold << " iter " << done << "/" << config.iterations << " loss " << r.loss << std::endl;
      }
    });
    for (size_t k = 0; k < result.folds.size(); ++k) {
      std::cout << "fold " << k << "\n" << result.folds[k].to_text();
      write_reports(fs::path(cv_out) / ("fold" + std::to_string(k)), result.folds[k]);
    }
    std::cout << "mean over folds\n" << result.summary.to_text();
    write_reports(cv_out, result.summary);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "sa2net: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const c10::Error& e) {
    std::cerr << "sa2net: tensor error: " << e.what_without_backtrace() << "\n";
    return 8;
  } catch (const std::exception& e) {
    std::cerr << "sa2net: error: " << e.what() << "\n";
    return 1;
  }
}
