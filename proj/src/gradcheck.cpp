// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "sa2net/attention.hpp"
#include "sa2net/error.hpp"
#include "sa2net/model.hpp"
#include "sa2net/structure_aware.hpp"

namespace sa2net {

namespace {

struct ComponentName {
  GradcheckComponent component;
  std::string_view name;
};

constexpr ComponentName kNames[] = {
    {GradcheckComponent::kGca, "gca"},
    {GradcheckComponent::kSca, "sca"},
    {GradcheckComponent::kSacsam, "sacsam"},
    {GradcheckComponent::kDecoderBlock, "decoder_block"},
    {GradcheckComponent::kAffinity, "affinity"},
    {GradcheckComponent::kFull, "full"},
};

}  // namespace

GradcheckComponent parse_gradcheck_component(std::string_view name) {
  for (const auto& entry : kNames) {
    if (entry.name == name) return entry.component;
  }
  fail(ErrorKind::kConfig, "unknown gradcheck component '" + std::string(name) +
                               "' (expected gca, sca, sacsam, decoder_block, affinity or full)");
}

std::string_view to_string(GradcheckComponent component) {
  for (const auto& entry : kNames) {
    if (entry.component == component) return entry.name;
  }
  return "unknown";
}

const std::vector<GradcheckComponent>& all_gradcheck_components() {
  static const std::vector<GradcheckComponent> all = [] {
    std::vector<GradcheckComponent> v;
    for (const auto& entry : kNames) v.push_back(entry.component);
    return v;
  }();
  return all;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  os << component << ": " << (passed ? "PASS" : "FAIL") << " max_rel_error=" << std::scientific
     << std::setprecision(3) << max_rel_error << " max_abs_error=" << max_abs_error << std::defaultfloat
     << " entries=" << entries << " worst=" << (worst_tensor.empty() ? "-" : worst_tensor) << " time=" << std::fixed
     << std::setprecision(2) << seconds << "s";
  return os.str();
}

GradcheckReport check_gradients(const std::function<torch::Tensor()>& loss, const NamedTensors& inputs,
                                uint64_t seed, const GradcheckOptions& options) {
  require(options.step > 0.0 && options.tolerance > 0.0 && options.floor > 0.0, ErrorKind::kConfig,
          "gradcheck: step, tolerance and floor must be positive");
  const auto start = std::chrono::steady_clock::now();
  for (const auto& [name, t] : inputs) {
    require(t.scalar_type() == torch::kFloat64 && t.requires_grad() && t.is_leaf(), ErrorKind::kConfig,
            "gradcheck: '" + name + "' must be a float64 leaf requiring grad");
  }

  for (const auto& [name, t] : inputs) {
    if (t.grad().defined()) t.grad().zero_();
  }
  loss().backward();
  std::vector<torch::Tensor> analytic;
  for (const auto& [name, t] : inputs) {
    analytic.push_back(t.grad().defined() ? t.grad().detach().clone() : torch::zeros_like(t));
  }

  GradcheckReport report;
  std::mt19937_64 rng(seed);
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto& [name, tensor] = inputs[i];
    auto flat = tensor.view({-1});
    auto grad = analytic[i].reshape({-1});
    std::vector<int64_t> entries(static_cast<size_t>(flat.numel()));
    std::iota(entries.begin(), entries.end(), 0);
    if (static_cast<int64_t>(entries.size()) > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<size_t>(options.max_entries_per_tensor));
    }
    for (const auto idx : entries) {
      const double original = flat[idx].item<double>();
      flat[idx] = original + options.step;
      const double plus = loss().item<double>();
      flat[idx] = original - options.step;
      const double minus = loss().item<double>();
      flat[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double exact = grad[idx].item<double>();
      const double abs_err = std::abs(exact - numeric);
      const double rel_err = abs_err / std::max({std::abs(exact), std::abs(numeric), options.floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || !std::isfinite(rel_err)) {
        report.max_rel_error = std::isfinite(rel_err) ? rel_err : std::numeric_limits<double>::infinity();
        report.worst_tensor = name;
      }
      ++report.entries;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

torch::Tensor leaf(torch::IntArrayRef shape) { return torch::randn(shape, f64()).requires_grad_(true); }

NamedTensors with_parameters(const torch::nn::Module& module, NamedTensors inputs) {
  for (const auto& p : module.named_parameters()) inputs.emplace_back(p.key(), p.value());
  return inputs;
}

}  // namespace

GradcheckReport gradcheck(GradcheckComponent component, uint64_t seed, const GradcheckOptions& options) {
  torch::manual_seed(seed);
  GradcheckReport report;
  switch (component) {
    case GradcheckComponent::kGca: {
      GlobalChannelAttention m(16, 8);
      m->to(torch::kFloat64);
      auto x = leaf({2, 16, 4, 5});
      auto r = torch::randn({2, 16, 4, 5}, f64());
      report = check_gradients([&] { return (m->forward(x) * r).sum(); }, with_parameters(*m, {{"x", x}}), seed,
                               options);
      break;
    }
    case GradcheckComponent::kSca: {
      SpatialCrissCrossAttention m(16, 8);
      m->to(torch::kFloat64);
      auto x = leaf({2, 16, 4, 5});
      auto r = torch::randn({2, 16, 4, 5}, f64());
      report = check_gradients([&] { return (m->forward(x) * r).sum(); }, with_parameters(*m, {{"x", x}}), seed,
                               options);
      break;
    }
    case GradcheckComponent::kSacsam: {
      ScaleAdaptiveAttention m(16, 8);
      m->to(torch::kFloat64);
      m->set_scales(0.7, 1.3);
      auto x = leaf({1, 16, 4, 5});
      auto r = torch::randn({1, 16, 4, 5}, f64());
      report = check_gradients([&] { return (m->forward(x) * r).sum(); }, with_parameters(*m, {{"x", x}}), seed,
                               options);
      break;
    }
    case GradcheckComponent::kDecoderBlock: {
      DecoderBlock m(16, 2);
      m->to(torch::kFloat64);
      auto q = leaf({2, 4, 16});
      auto t = leaf({2, 12, 16});
      auto r1 = torch::randn({2, 4, 16}, f64());
      auto r2 = torch::randn({2, 12, 16}, f64());
      auto r3 = torch::randn({2, 4, 12}, f64());
      report = check_gradients(
          [&] {
            auto out = m->forward(q, t);
            return (out.queries * r1).sum() + (out.tokens * r2).sum() + (out.cross_attention * r3).sum();
          },
          with_parameters(*m, {{"queries", q}, {"tokens", t}}), seed, options);
      break;
    }
    case GradcheckComponent::kAffinity: {
      AffinityHead m(16);
      m->to(torch::kFloat64);
      auto f = leaf({2, 4, 16});
      auto t = leaf({2, 12, 16});
      auto masks = leaf({2, 4, 16});
      auto r = torch::randn({2, 12, 16}, f64());
      report = check_gradients(
          [&] {
            auto conf = compute_confidence(masks, t);
            return (structure_affinity_transform(t, m->forward(f, t), conf) * r).sum();
          },
          with_parameters(*m, {{"class_features", f}, {"tokens", t}, {"masks", masks}}), seed, options);
      break;
    }
    case GradcheckComponent::kFull: {
      ModelConfig cfg;
      SA2Net m(cfg);
      m->to(torch::kFloat64);
      auto x = leaf({1, 1, 64, 64});  // stride-32 grid of 2 x 2, so T = 4
      auto r1 = torch::randn({1, cfg.num_classes, 64, 64}, f64());
      auto r2 = torch::randn({1, cfg.num_classes, 64, 64}, f64());
      report = check_gradients(
          [&] {
            auto out = m->forward(x);
            return (out.sam * r1).sum() + (out.attention * r2).sum();
          },
          with_parameters(*m, {{"image", x}}), seed, options);
      break;
    }
  }
  report.component = std::string(to_string(component));
  return report;
}

}  // namespace sa2net
