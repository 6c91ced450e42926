// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include "sa2net/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "sa2net/error.hpp"
#include "sa2net/image_io.hpp"
#include "sa2net/metrics.hpp"

namespace sa2net {

namespace F = torch::nn::functional;

void Volume3D::validate() const {
  require(voxels.defined() && voxels.dim() == 3, ErrorKind::kShape, "Volume3D: voxels must be (D, H, W)");
  require(voxels.size(0) >= 1, ErrorKind::kShape, "Volume3D: depth must be >= 1");
  require(torch::isfinite(voxels).all().item<bool>(), ErrorKind::kData, "Volume3D: non-finite voxel");
}

void Sample::validate() const {
  require(image.defined() && image.dim() == 2, ErrorKind::kShape, "Sample: image must be (H, W)");
  require(mask.defined() && mask.sizes() == image.sizes(), ErrorKind::kShape,
          "Sample: image and mask differ in shape");
  if (mask.numel() > 0) {
    require(mask.min().item<int64_t>() >= 0 && mask.max().item<int64_t>() < kNumClasses, ErrorKind::kData,
            "Sample: mask label outside {0, 1, 2, 3}");
  }
}

torch::Tensor vpi_project(const Volume3D& volume, int64_t d0, int64_t d1) {
  require(volume.voxels.defined() && volume.voxels.dim() == 3, ErrorKind::kShape,
          "vpi_project: voxels must be (D, H, W)");
  if (!(0 <= d0 && d0 < d1 && d1 <= volume.depth())) {
    fail(ErrorKind::kConfig, "vpi_project: depth range [" + std::to_string(d0) + ", " + std::to_string(d1) +
                                 ") is empty or outside [0, " + std::to_string(volume.depth()) + ")");
  }
  return volume.voxels.slice(0, d0, d1).mean(0);
}

// ---------------------------------------------------------------------------
// Phantoms

namespace {

struct Blob {
  int64_t label;
  double cx, cy;  // pixel units
  double a, b;    // semi-axes along and across the blob
  double theta;   // rotation of the long axis, radians
  int64_t d0, d1; // occupied depth slices
  double intensity;

  // Normalised squared radius; < 1 inside.
  double radius2(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = dx * std::cos(theta) + dy * std::sin(theta);
    const double v = -dx * std::sin(theta) + dy * std::cos(theta);
    return (u / a) * (u / a) + (v / b) * (v / b);
  }

  // Conservative bounding box, clipped to the image.
  void bounds(int64_t h, int64_t w, int64_t& y0, int64_t& y1, int64_t& x0, int64_t& x1) const {
    const double r = std::max(a, b) + 1.0;
    y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(cy - r)), 0, h);
    y1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(cy + r)) + 1, 0, h);
    x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(cx - r)), 0, w);
    x1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(cx + r)) + 1, 0, w);
  }
};

struct Geometry {
  std::vector<Blob> blobs;  // painted in order; later blobs win
  double amplitude, period, phase;
  double width;

  double centerline(double y) const {
    return width / 2.0 + amplitude * std::sin(2.0 * std::numbers::pi * y / period + phase);
  }
};

Geometry draw_geometry(std::mt19937_64& rng, int64_t height, int64_t width, int64_t depth) {
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  const auto slices = [depth](double lo, double hi) {
    const auto d0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(lo * depth)), 0, depth - 1);
    const auto d1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(hi * depth)), d0 + 1, depth);
    return std::pair{d0, d1};
  };

  Geometry g;
  g.width = w;
  g.amplitude = uniform(0.02, 0.08) * w;
  g.period = uniform(1.5, 3.0) * h;
  g.phase = uniform(0.0, 2.0 * std::numbers::pi);

  const auto levels = static_cast<int64_t>(std::floor(uniform(9.0, 11.0)));
  const double spacing = h / static_cast<double>(levels);
  const double split = uniform(0.55, 0.65) * h;
  std::vector<Blob> ribs, lumps, processes;
  for (double y = uniform(0.4, 0.9) * spacing; y < h - 0.4 * spacing; y += spacing) {
    const double cx = g.centerline(y);
    if (y < split) {
      const double tilt = uniform(10.0, 20.0) * std::numbers::pi / 180.0;
      const double offset = uniform(0.22, 0.26) * w;
      const double a = uniform(0.11, 0.14) * w;
      const double b = uniform(0.15, 0.2) * spacing;
      const auto [d0, d1] = slices(0.5, 0.85);
      const double drop = 0.1 * spacing;
      ribs.push_back({1, cx - offset, y + drop, a, b, -tilt, d0, d1, uniform(0.7, 0.8)});
      ribs.push_back({1, cx + offset, y + drop, a, b, tilt, d0, d1, uniform(0.7, 0.8)});
      const auto [p0, p1] = slices(0.1, 0.4);
      processes.push_back({2, cx, y, uniform(0.045, 0.055) * w, uniform(0.2, 0.24) * spacing, 0.0, p0, p1,
                           uniform(0.9, 1.0)});
    } else {
      const auto [d0, d1] = slices(0.25, 0.65);
      lumps.push_back({3, cx, y, uniform(0.15, 0.17) * w, uniform(0.26, 0.3) * spacing, uniform(-0.05, 0.05), d0,
                       d1, uniform(0.55, 0.65)});
    }
  }
  g.blobs = ribs;
  g.blobs.insert(g.blobs.end(), lumps.begin(), lumps.end());
  g.blobs.insert(g.blobs.end(), processes.begin(), processes.end());
  return g;
}

}  // namespace

Volume3D generate_phantom_volume(uint64_t seed, int64_t height, int64_t width, const PhantomOptions& options,
                                 torch::Tensor* mask) {
  require(height >= 64 && width >= 64, ErrorKind::kConfig, "generate_phantom: height and width must be >= 64");
  require(options.depth >= 1, ErrorKind::kConfig, "generate_phantom: depth must be >= 1");
  require(0.0 < options.speckle_low && options.speckle_low <= options.speckle_high, ErrorKind::kConfig,
          "generate_phantom: invalid speckle range");
  std::mt19937_64 rng(seed);
  const auto geometry = draw_geometry(rng, height, width, options.depth);
  const int64_t depth = options.depth;

  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double fy = uniform(1.0, 3.0);
  const double fx = uniform(0.5, 2.0);
  const double py = uniform(0.0, 2.0 * std::numbers::pi);
  const double px = uniform(0.0, 2.0 * std::numbers::pi);

  auto voxels = torch::empty({depth, height, width}, torch::kFloat64);
  auto vox = voxels.accessor<double, 3>();
  for (int64_t d = 0; d < depth; ++d) {
    const double shade = 0.1 + 0.04 * static_cast<double>(d) / static_cast<double>(depth);
    for (int64_t y = 0; y < height; ++y) {
      const double sy = std::sin(2.0 * std::numbers::pi * fy * static_cast<double>(y) / height + py);
      for (int64_t x = 0; x < width; ++x) {
        vox[d][y][x] = shade + 0.04 * sy * std::cos(2.0 * std::numbers::pi * fx * static_cast<double>(x) / width + px);
      }
    }
  }

  auto labels = torch::zeros({height, width}, torch::kLong);
  auto lab = labels.accessor<int64_t, 2>();
  for (const auto& blob : geometry.blobs) {
    int64_t y0, y1, x0, x1;
    blob.bounds(height, width, y0, y1, x0, x1);
    for (int64_t y = y0; y < y1; ++y) {
      for (int64_t x = x0; x < x1; ++x) {
        const double r2 = blob.radius2(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        if (r2 >= 1.0) continue;
        lab[y][x] = blob.label;
        for (int64_t d = blob.d0; d < blob.d1; ++d) vox[d][y][x] = blob.intensity * (1.0 - 0.35 * r2);
      }
    }
  }

  // Multiplicative speckle, then a 3x3 box blur within each slice.
  std::uniform_real_distribution<double> speckle(options.speckle_low, options.speckle_high);
  auto* data = voxels.data_ptr<double>();
  for (int64_t i = 0; i < voxels.numel(); ++i) data[i] *= speckle(rng);
  voxels = F::avg_pool2d(voxels.unsqueeze(1),
                         F::AvgPool2dFuncOptions(3).stride(1).padding(1).count_include_pad(false))
               .squeeze(1)
               .clamp(0.0, 1.0);
  if (mask) *mask = labels;
  return Volume3D{voxels};
}

Sample generate_phantom(uint64_t seed, int64_t height, int64_t width, const PhantomOptions& options) {
  torch::Tensor mask;
  const auto volume = generate_phantom_volume(seed, height, width, options, &mask);
  Sample s;
  s.image = vpi_project(volume, 0, volume.depth()).to(torch::kFloat32);
  s.mask = mask;
  std::ostringstream id;
  id << "phantom" << std::setw(4) << std::setfill('0') << seed;
  s.subject_id = id.str();
  return s;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentOptions::validate() const {
  require(0.0 < scale_min && scale_min <= scale_max, ErrorKind::kConfig, "augment: need 0 < scale_min <= scale_max");
  require(crop_height >= 1 && crop_width >= 1, ErrorKind::kConfig, "augment: crop size must be positive");
  require(0.0 <= flip_probability && flip_probability <= 1.0, ErrorKind::kConfig,
          "augment: flip_probability must lie in [0, 1]");
}

namespace {

int64_t scaled_extent(int64_t n, double scale) {
  return std::max<int64_t>(1, std::llround(static_cast<double>(n) * scale));
}

}  // namespace

AugmentParams draw_augment_params(int64_t height, int64_t width, const AugmentOptions& options,
                                  std::mt19937_64& rng) {
  options.validate();
  AugmentParams p;
  p.scale = std::uniform_real_distribution<double>(options.scale_min, options.scale_max)(rng);
  const auto sh = scaled_extent(height, p.scale);
  const auto sw = scaled_extent(width, p.scale);
  p.offset_y = std::uniform_int_distribution<int64_t>(0, std::max<int64_t>(0, sh - options.crop_height))(rng);
  p.offset_x = std::uniform_int_distribution<int64_t>(0, std::max<int64_t>(0, sw - options.crop_width))(rng);
  p.flip = std::bernoulli_distribution(options.flip_probability)(rng);
  return p;
}

Sample apply_augmentation(const Sample& sample, const AugmentParams& params, const AugmentOptions& options) {
  options.validate();
  sample.validate();
  require(params.scale > 0.0, ErrorKind::kConfig, "augment: scale must be positive");
  const auto sh = scaled_extent(sample.image.size(0), params.scale);
  const auto sw = scaled_extent(sample.image.size(1), params.scale);

  auto image = sample.image.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  auto mask = sample.mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  if (sh != sample.image.size(0) || sw != sample.image.size(1)) {
    const std::vector<int64_t> size{sh, sw};
    image = F::interpolate(image, F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false));
    mask = at::_upsample_nearest_exact2d(mask, size);
  }
  image = image.squeeze(0).squeeze(0);
  mask = mask.squeeze(0).squeeze(0).round().to(torch::kLong);

  require(0 <= params.offset_y && params.offset_y < sh && 0 <= params.offset_x && params.offset_x < sw,
          ErrorKind::kConfig, "augment: crop origin outside the rescaled image");
  const auto ch = std::min(options.crop_height, sh - params.offset_y);
  const auto cw = std::min(options.crop_width, sw - params.offset_x);
  Sample out;
  out.image = torch::zeros({options.crop_height, options.crop_width}, torch::kFloat32);
  out.mask = torch::zeros({options.crop_height, options.crop_width}, torch::kLong);
  using torch::indexing::Slice;
  out.image.index_put_({Slice(0, ch), Slice(0, cw)},
                       image.index({Slice(params.offset_y, params.offset_y + ch), Slice(params.offset_x, params.offset_x + cw)}));
  out.mask.index_put_({Slice(0, ch), Slice(0, cw)},
                      mask.index({Slice(params.offset_y, params.offset_y + ch), Slice(params.offset_x, params.offset_x + cw)}));
  if (params.flip) {
    out.image = out.image.flip({1}).contiguous();
    out.mask = out.mask.flip({1}).contiguous();
  }
  out.subject_id = sample.subject_id;
  out.index = sample.index;
  return out;
}

Sample augment(const Sample& sample, const AugmentOptions& options, std::mt19937_64& rng) {
  const auto params = draw_augment_params(sample.image.size(0), sample.image.size(1), options, rng);
  return apply_augmentation(sample, params, options);
}

uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) {
  // splitmix64 finaliser over a simple combination of the inputs.
  auto mix = [](uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

// ---------------------------------------------------------------------------
// Cross-validation

const std::vector<std::string>& FoldSplit::test_subjects(size_t fold) const {
  require(fold < folds.size(), ErrorKind::kConfig, "fold index out of range");
  return folds[fold];
}

std::vector<std::string> FoldSplit::train_subjects(size_t fold) const {
  require(fold < folds.size(), ErrorKind::kConfig, "fold index out of range");
  std::vector<std::string> out;
  for (size_t i = 0; i < folds.size(); ++i) {
    if (i != fold) out.insert(out.end(), folds[i].begin(), folds[i].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldSplit make_folds(std::vector<std::string> ids, uint64_t seed, int64_t num_folds) {
  require(num_folds >= 2, ErrorKind::kConfig, "make_folds: need at least 2 folds");
  if (static_cast<int64_t>(ids.size()) < num_folds) {
    fail(ErrorKind::kConfig, "make_folds: " + std::to_string(ids.size()) + " subjects cannot fill " +
                                 std::to_string(num_folds) + " folds");
  }
  std::sort(ids.begin(), ids.end());
  const auto dup = std::adjacent_find(ids.begin(), ids.end());
  if (dup != ids.end()) fail(ErrorKind::kConfig, "make_folds: duplicate subject id '" + *dup + "'");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldSplit split;
  split.folds.resize(static_cast<size_t>(num_folds));
  for (size_t i = 0; i < ids.size(); ++i) split.folds[i % split.folds.size()].push_back(ids[i]);
  return split;
}

std::vector<std::string> subject_ids(const std::vector<Sample>& samples) {
  std::set<std::string> unique;
  for (const auto& s : samples) unique.insert(s.subject_id);
  return {unique.begin(), unique.end()};
}

std::vector<Sample> select_subjects(const std::vector<Sample>& samples, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (wanted.count(s.subject_id)) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

constexpr std::string_view kImageSuffix = "_img.png";
constexpr std::string_view kMaskSuffix = "_mask.png";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool parse_index(std::string_view text, int64_t& value) {
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end && value >= 0;
}

}  // namespace

std::vector<Sample> load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) fail(ErrorKind::kIo, "dataset root '" + root.string() + "' is not a directory");
  std::vector<fs::path> subjects;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) subjects.push_back(entry.path());
  }
  std::sort(subjects.begin(), subjects.end());

  std::vector<Sample> samples;
  for (const auto& dir : subjects) {
    std::map<int64_t, fs::path> images;
    std::set<int64_t> masks;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      int64_t index = 0;
      if (ends_with(name, kImageSuffix) &&
          parse_index(std::string_view(name).substr(0, name.size() - kImageSuffix.size()), index)) {
        images.emplace(index, entry.path());
      } else if (ends_with(name, kMaskSuffix) &&
                 parse_index(std::string_view(name).substr(0, name.size() - kMaskSuffix.size()), index)) {
        masks.insert(index);
      }
    }
    for (const auto index : masks) {
      if (!images.count(index)) {
        fail(ErrorKind::kData, "mask without image in '" + dir.string() + "' (index " + std::to_string(index) + ")");
      }
    }
    for (const auto& [index, image_path] : images) {
      if (!masks.count(index)) {
        fail(ErrorKind::kData, "image '" + image_path.string() + "' has no matching mask");
      }
      const auto name = image_path.filename().string();
      const auto mask_path = image_path.parent_path() / (name.substr(0, name.size() - kImageSuffix.size()) +
                                                         std::string(kMaskSuffix));
      Sample s;
      s.image = read_png_u8(image_path).to(torch::kFloat32) / 255.0;
      s.mask = read_png_u8(mask_path).to(torch::kLong);
      if (s.image.sizes() != s.mask.sizes()) {
        fail(ErrorKind::kData, "'" + mask_path.string() + "' does not match the size of its image");
      }
      const auto max_label = s.mask.max().item<int64_t>();
      if (max_label >= kNumClasses) {
        fail(ErrorKind::kData, "'" + mask_path.string() + "' contains unknown label value " + std::to_string(max_label));
      }
      s.subject_id = dir.filename().string();
      s.index = index;
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty()) std::clog << "warning: no samples found under '" << root.string() << "'\n";
  return samples;
}

void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples) {
  namespace fs = std::filesystem;
  for (const auto& s : samples) {
    s.validate();
    require(!s.subject_id.empty() && s.subject_id.find('/') == std::string::npos, ErrorKind::kData,
            "write_dataset: invalid subject id '" + s.subject_id + "'");
    const auto dir = root / s.subject_id;
    fs::create_directories(dir);
    std::ostringstream stem;
    stem << std::setw(4) << std::setfill('0') << s.index;
    write_png_gray(dir / (stem.str() + std::string(kImageSuffix)),
                   (s.image.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8));
    write_png_palette(dir / (stem.str() + std::string(kMaskSuffix)), s.mask.to(torch::kUInt8), label_palette());
  }
}

torch::Tensor normalize_image(const torch::Tensor& image) {
  auto x = image.to(torch::kFloat32);
  const auto mean = x.mean();
  const auto std = x.std(/*unbiased=*/false).clamp_min(1e-6);
  return (x - mean) / std;
}

std::pair<torch::Tensor, torch::Tensor> collate(const std::vector<Sample>& samples) {
  require(!samples.empty(), ErrorKind::kData, "collate: empty batch");
  std::vector<torch::Tensor> images, masks;
  for (const auto& s : samples) {
    images.push_back(normalize_image(s.image).unsqueeze(0));
    masks.push_back(s.mask);
  }
  return {torch::stack(images), torch::stack(masks)};
}

}  // namespace sa2net
