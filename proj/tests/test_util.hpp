// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace sa2net::testing_util {

inline double gelu_ref(double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }

struct Component {
  int64_t pixels = 0;
  double centroid_y = 0.0;
  double centroid_x = 0.0;
};

/// 4-connected components of `mask == label`, found by flood fill.
inline std::vector<Component> connected_components(const torch::Tensor& mask, int64_t label) {
  const auto h = mask.size(0), w = mask.size(1);
  auto m = mask.contiguous();
  auto acc = m.accessor<int64_t, 2>();
  std::vector<int> seen(static_cast<size_t>(h * w), 0);
  std::vector<Component> out;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      if (acc[y][x] != label || seen[static_cast<size_t>(y * w + x)]) continue;
      Component c;
      std::vector<std::pair<int64_t, int64_t>> stack{{y, x}};
      seen[static_cast<size_t>(y * w + x)] = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        ++c.pixels;
        c.centroid_y += static_cast<double>(cy);
        c.centroid_x += static_cast<double>(cx);
        const int64_t dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const auto ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (acc[ny][nx] != label || seen[static_cast<size_t>(ny * w + nx)]) continue;
          seen[static_cast<size_t>(ny * w + nx)] = 1;
          stack.emplace_back(ny, nx);
        }
      }
      c.centroid_y /= static_cast<double>(c.pixels);
      c.centroid_x /= static_cast<double>(c.pixels);
      out.push_back(c);
    }
  }
  return out;
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sa2net_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Random integer label map in [0, classes).
inline torch::Tensor random_labels(std::mt19937_64& rng, int64_t h, int64_t w, int64_t classes = 4) {
  auto t = torch::empty({h, w}, torch::kLong);
  auto a = t.accessor<int64_t, 2>();
  std::uniform_int_distribution<int64_t> d(0, classes - 1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) a[y][x] = d(rng);
  return t;
}

}  // namespace sa2net::testing_util
