// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <vector>

namespace sa2net {

using Rgb = std::array<uint8_t, 3>;

/// Reads an 8-bit grayscale or palette PNG. Palette images yield their raw
/// indices, grayscale images their gray level. Returns (H, W) uint8.
torch::Tensor read_png_u8(const std::filesystem::path& path);

/// Writes an (H, W) uint8 tensor as 8-bit grayscale.
void write_png_gray(const std::filesystem::path& path, const torch::Tensor& gray);

/// Writes an (H, W) uint8 index tensor as an 8-bit palette PNG.
void write_png_palette(const std::filesystem::path& path, const torch::Tensor& indices,
                       const std::vector<Rgb>& palette);

/// Writes an (H, W, 3) uint8 tensor as RGB.
void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& rgb);

/// Label colours: background black, rib red, thoracic green, lump blue.
const std::vector<Rgb>& label_palette();

/// Blends label colours over a grayscale [0, 1] image; background pixels
/// keep the gray value. Returns (H, W, 3) uint8.
torch::Tensor label_overlay(const torch::Tensor& image, const torch::Tensor& labels, double opacity = 0.6);

}  // namespace sa2net
