// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace sa2net {

/// Depth-major voxel grid, (D, H, W) float64 with intensities in [0, 1].
struct Volume3D {
  torch::Tensor voxels;

  int64_t depth() const { return voxels.size(0); }
  void validate() const;
};

struct Sample {
  torch::Tensor image;  // (H, W) float32 in [0, 1]
  torch::Tensor mask;   // (H, W) int64 in {0, 1, 2, 3}
  std::string subject_id;
  int64_t index = 0;

  void validate() const;
};

/// Mean of voxels[d0:d1] along depth. Returns (H, W) in the volume's dtype.
torch::Tensor vpi_project(const Volume3D& volume, int64_t d0, int64_t d1);

struct PhantomOptions {
  int64_t depth = 12;
  double speckle_low = 0.7;
  double speckle_high = 1.3;
};

/// Synthetic coronal spine image with an analytically rendered mask. A pure
/// function of (seed, height, width, options).
Sample generate_phantom(uint64_t seed, int64_t height, int64_t width, const PhantomOptions& options = {});

/// The voxel grid behind generate_phantom, exposed for tests and tooling.
Volume3D generate_phantom_volume(uint64_t seed, int64_t height, int64_t width, const PhantomOptions& options,
                                 torch::Tensor* mask = nullptr);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentOptions {
  double scale_min = 0.5;
  double scale_max = 2.0;
  int64_t crop_height = 512;
  int64_t crop_width = 512;
  double flip_probability = 0.5;

  void validate() const;
};

/// One concrete augmentation draw.
struct AugmentParams {
  double scale = 1.0;
  int64_t offset_y = 0;  // crop origin inside the rescaled image
  int64_t offset_x = 0;
  bool flip = false;
};

AugmentParams draw_augment_params(int64_t height, int64_t width, const AugmentOptions& options,
                                  std::mt19937_64& rng);

/// Rescale (image bilinear, mask nearest), crop with zero padding on the
/// bottom/right when short, then optionally mirror horizontally.
Sample apply_augmentation(const Sample& sample, const AugmentParams& params, const AugmentOptions& options);

Sample augment(const Sample& sample, const AugmentOptions& options, std::mt19937_64& rng);

/// Mixes a base seed with two stream coordinates (e.g. iteration, slot).
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0);

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;

  size_t size() const { return folds.size(); }
  const std::vector<std::string>& test_subjects(size_t fold) const;
  std::vector<std::string> train_subjects(size_t fold) const;
};

/// Sorts the ids, shuffles them with the seed and deals them round-robin
/// into `num_folds` folds. Ids must be unique.
FoldSplit make_folds(std::vector<std::string> subject_ids, uint64_t seed, int64_t num_folds = 3);

std::vector<std::string> subject_ids(const std::vector<Sample>& samples);
std::vector<Sample> select_subjects(const std::vector<Sample>& samples, const std::vector<std::string>& ids);

// ---------------------------------------------------------------------------
// Files

/// Reads root/<subject>/<index>_img.png with matching <index>_mask.png.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

/// Writes samples in the layout read by load_dataset.
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);

/// Per-image standardisation to zero mean and unit variance.
torch::Tensor normalize_image(const torch::Tensor& image);

/// Stacks samples into a normalised (B, 1, H, W) image batch and (B, H, W) masks.
std::pair<torch::Tensor, torch::Tensor> collate(const std::vector<Sample>& samples);

}  // namespace sa2net
