// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "sa2net/error.hpp"

namespace sa2net {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_error_handler(png_structp, png_const_charp message) {
  throw Error(ErrorKind::kIo, std::string("libpng: ") + message);
}

void png_warning_handler(png_structp, png_const_charp) {}

// Owns a libpng read or write struct pair.
class PngHandle {
 public:
  explicit PngHandle(bool reading) : reading_(reading) {
    png_ = reading ? png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler)
                   : png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png_) fail(ErrorKind::kIo, "libpng: cannot allocate codec");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      release();
      fail(ErrorKind::kIo, "libpng: cannot allocate info struct");
    }
  }
  ~PngHandle() { release(); }
  PngHandle(const PngHandle&) = delete;
  PngHandle& operator=(const PngHandle&) = delete;

  png_structp png() const { return png_; }
  png_infop info() const { return info_; }

 private:
  void release() {
    if (reading_) {
      png_destroy_read_struct(&png_, info_ ? &info_ : nullptr, nullptr);
    } else {
      png_destroy_write_struct(&png_, info_ ? &info_ : nullptr);
    }
  }

  bool reading_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

void write_rows(const std::filesystem::path& path, const torch::Tensor& data, int color_type,
                const std::vector<Rgb>* palette) {
  auto pixels = data.to(torch::kUInt8).contiguous();
  const auto h = pixels.size(0);
  const auto w = pixels.size(1);
  const int64_t row_bytes = pixels.numel() / h;
  auto file = open_file(path, "wb");
  PngHandle handle(false);
  png_init_io(handle.png(), file.get());
  png_set_IHDR(handle.png(), handle.info(), static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> colors;
  if (palette) {
    for (const auto& c : *palette) colors.push_back({c[0], c[1], c[2]});
    png_set_PLTE(handle.png(), handle.info(), colors.data(), static_cast<int>(colors.size()));
  }
  png_write_info(handle.png(), handle.info());
  auto* base = pixels.data_ptr<uint8_t>();
  for (int64_t y = 0; y < h; ++y) png_write_row(handle.png(), base + y * row_bytes);
  png_write_end(handle.png(), nullptr);
}

}  // namespace

torch::Tensor read_png_u8(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  PngHandle handle(true);
  png_init_io(handle.png(), file.get());
  png_read_info(handle.png(), handle.info());
  const auto w = png_get_image_width(handle.png(), handle.info());
  const auto h = png_get_image_height(handle.png(), handle.info());
  const int color_type = png_get_color_type(handle.png(), handle.info());
  const int bit_depth = png_get_bit_depth(handle.png(), handle.info());

  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_PALETTE) {
    fail(ErrorKind::kData, "'" + path.string() + "' is not a grayscale or palette PNG");
  }
  if (bit_depth < 8) png_set_packing(handle.png());
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(handle.png());
  if (bit_depth == 16) png_set_strip_16(handle.png());
  png_read_update_info(handle.png(), handle.info());
  if (png_get_rowbytes(handle.png(), handle.info()) != w) {
    fail(ErrorKind::kData, "'" + path.string() + "' has an unsupported pixel layout");
  }

  auto out = torch::empty({static_cast<int64_t>(h), static_cast<int64_t>(w)}, torch::kUInt8);
  auto* base = out.data_ptr<uint8_t>();
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = base + static_cast<size_t>(y) * w;
  png_read_image(handle.png(), rows.data());
  png_read_end(handle.png(), nullptr);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const torch::Tensor& gray) {
  require(gray.dim() == 2, ErrorKind::kShape, "write_png_gray expects (H, W)");
  write_rows(path, gray, PNG_COLOR_TYPE_GRAY, nullptr);
}

void write_png_palette(const std::filesystem::path& path, const torch::Tensor& indices,
                       const std::vector<Rgb>& palette) {
  require(indices.dim() == 2, ErrorKind::kShape, "write_png_palette expects (H, W)");
  require(!palette.empty() && palette.size() <= 256, ErrorKind::kConfig, "palette must hold 1..256 colours");
  require(indices.max().item<int64_t>() < static_cast<int64_t>(palette.size()), ErrorKind::kData,
          "palette index out of range");
  write_rows(path, indices, PNG_COLOR_TYPE_PALETTE, &palette);
}

void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& rgb) {
  require(rgb.dim() == 3 && rgb.size(2) == 3, ErrorKind::kShape, "write_png_rgb expects (H, W, 3)");
  write_rows(path, rgb, PNG_COLOR_TYPE_RGB, nullptr);
}

const std::vector<Rgb>& label_palette() {
  static const std::vector<Rgb> palette = {{0, 0, 0}, {255, 0, 0}, {0, 255, 0}, {0, 0, 255}};
  return palette;
}

torch::Tensor label_overlay(const torch::Tensor& image, const torch::Tensor& labels, double opacity) {
  require(image.dim() == 2 && image.sizes() == labels.sizes(), ErrorKind::kShape,
          "label_overlay expects matching (H, W) image and labels");
  const auto& palette = label_palette();
  auto colors = torch::empty({static_cast<int64_t>(palette.size()), 3}, torch::kFloat32);
  for (size_t i = 0; i < palette.size(); ++i) {
    for (size_t c = 0; c < 3; ++c) colors[static_cast<int64_t>(i)][static_cast<int64_t>(c)] = palette[i][c] / 255.0;
  }
  auto lab = labels.to(torch::kLong).clamp(0, static_cast<int64_t>(palette.size()) - 1);
  auto gray = image.to(torch::kFloat32).clamp(0.0, 1.0).unsqueeze(-1).expand({image.size(0), image.size(1), 3});
  auto painted = colors.index_select(0, lab.flatten()).reshape({image.size(0), image.size(1), 3});
  auto fg = lab.gt(0).unsqueeze(-1).to(torch::kFloat32);
  auto blended = gray * (1.0 - opacity * fg) + painted * (opacity * fg);
  return (blended * 255.0).round().clamp(0, 255).to(torch::kUInt8);
}

}  // namespace sa2net
