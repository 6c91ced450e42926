// Copyright (c) 2026 The sa2net Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "sa2net/data.hpp"
#include "sa2net/error.hpp"
#include "sa2net/image_io.hpp"
#include "sa2net/metrics.hpp"
#include "test_util.hpp"

namespace sa2net {
namespace {

namespace fs = std::filesystem;
using testing_util::connected_components;
using testing_util::TempDir;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an sa2net::Error";
  return ErrorKind::kConfig;
}

TEST(Vpi, AveragesDepthRange) {
  auto voxels = torch::arange(24, torch::kFloat64).reshape({4, 2, 3});
  Volume3D vol{voxels};
  EXPECT_TRUE(torch::equal(vpi_project(vol, 2, 3), voxels[2]));
  EXPECT_TRUE(torch::allclose(vpi_project(vol, 0, 4), (voxels[0] + voxels[1] + voxels[2] + voxels[3]) / 4.0));
  // Element [0][0] over slices 1..2: (6 + 12) / 2.
  EXPECT_DOUBLE_EQ(vpi_project(vol, 1, 3)[0][0].item<double>(), 9.0);
}

TEST(Vpi, IsLinear) {
  torch::manual_seed(4);
  Volume3D a{torch::randn({5, 4, 4}, torch::kFloat64)};
  Volume3D b{torch::randn({5, 4, 4}, torch::kFloat64)};
  Volume3D mix{2.0 * a.voxels - 0.5 * b.voxels};
  EXPECT_TRUE(torch::allclose(vpi_project(mix, 1, 4), 2.0 * vpi_project(a, 1, 4) - 0.5 * vpi_project(b, 1, 4), 0.0,
                              1e-12));
}

TEST(Vpi, RejectsBadRanges) {
  Volume3D vol{torch::zeros({3, 2, 2})};
  EXPECT_EQ(kind_of([&] { vpi_project(vol, 2, 2); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { vpi_project(vol, 0, 4); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { vpi_project(vol, -1, 2); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { vpi_project(Volume3D{torch::zeros({2, 2})}, 0, 1); }), ErrorKind::kShape);
}

TEST(Phantom, DeterministicPerSeed) {
  auto a = generate_phantom(5, 128, 64);
  auto b = generate_phantom(5, 128, 64);
  auto c = generate_phantom(6, 128, 64);
  EXPECT_TRUE(torch::equal(a.image, b.image));
  EXPECT_TRUE(torch::equal(a.mask, b.mask));
  EXPECT_FALSE(torch::equal(a.mask, c.mask));
  EXPECT_EQ(a.subject_id, "phantom0005");
  EXPECT_EQ(a.image.scalar_type(), torch::kFloat32);
  EXPECT_EQ(a.mask.scalar_type(), torch::kLong);
  EXPECT_GE(a.image.min().item<float>(), 0.0f);
  EXPECT_LE(a.image.max().item<float>(), 1.0f);
  EXPECT_THROW(generate_phantom(0, 32, 64), Error);
}

TEST(Phantom, ImageIsProjectionOfVolume) {
  torch::Tensor mask;
  auto vol = generate_phantom_volume(3, 128, 64, {}, &mask);
  auto s = generate_phantom(3, 128, 64);
  EXPECT_EQ(vol.depth(), 12);
  EXPECT_TRUE(torch::allclose(vpi_project(vol, 0, vol.depth()).to(torch::kFloat32), s.image));
  EXPECT_TRUE(torch::equal(mask, s.mask));
}

TEST(Phantom, ClassFractionsStayInBands) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto s = generate_phantom(seed, 256, 128);
    const double n = static_cast<double>(s.mask.numel());
    std::array<double, 4> frac{};
    for (int64_t c = 0; c < 4; ++c) frac[static_cast<size_t>(c)] = (s.mask == c).sum().item<double>() / n;
    EXPECT_GT(frac[0], 0.75) << "seed " << seed;
    EXPECT_GT(frac[1], 0.04) << "seed " << seed;
    EXPECT_GT(frac[2], 0.01) << "seed " << seed;
    EXPECT_GT(frac[3], 0.02) << "seed " << seed;
  }
}

TEST(Phantom, RibsComeInLeftRightPairs) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto s = generate_phantom(seed, 256, 128);
    int left = 0, right = 0;
    for (const auto& c : connected_components(s.mask, 1)) {
      if (c.pixels < 10) continue;
      (c.centroid_x < 64.0 ? left : right)++;
    }
    EXPECT_GE(left, 3) << "seed " << seed;
    EXPECT_LE(std::abs(left - right), 1) << "seed " << seed;
    // Ribs lie above the lumps.
    auto rib_rows = (s.mask == 1).nonzero().select(1, 0).to(torch::kFloat64).mean().item<double>();
    auto lump_rows = (s.mask == 3).nonzero().select(1, 0).to(torch::kFloat64).mean().item<double>();
    EXPECT_LT(rib_rows, lump_rows);
  }
}

Sample stripe_sample(int64_t h, int64_t w) {
  // Vertical stripes 8 px wide following 0 1 2 3 2 1 0 ..., so neighbours differ by one.
  const int64_t pattern[] = {0, 1, 2, 3, 2, 1};
  Sample s;
  s.mask = torch::empty({h, w}, torch::kLong);
  auto m = s.mask.accessor<int64_t, 2>();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) m[y][x] = pattern[(x / 8) % 6];
  s.image = s.mask.to(torch::kFloat32);
  s.subject_id = "stripes";
  return s;
}

TEST(Augment, IdentityParamsReturnInput) {
  auto s = generate_phantom(1, 128, 64);
  AugmentOptions opt;
  opt.crop_height = 128;
  opt.crop_width = 64;
  auto out = apply_augmentation(s, AugmentParams{}, opt);
  EXPECT_TRUE(torch::equal(out.image, s.image));
  EXPECT_TRUE(torch::equal(out.mask, s.mask));
}

TEST(Augment, FlipIsAnInvolution) {
  auto s = generate_phantom(2, 128, 64);
  AugmentOptions opt;
  opt.crop_height = 128;
  opt.crop_width = 64;
  AugmentParams flip;
  flip.flip = true;
  auto once = apply_augmentation(s, flip, opt);
  EXPECT_TRUE(torch::equal(once.mask, s.mask.flip({1})));
  auto twice = apply_augmentation(once, flip, opt);
  EXPECT_TRUE(torch::equal(twice.image, s.image));
  EXPECT_TRUE(torch::equal(twice.mask, s.mask));
}

TEST(Augment, CropPadsWithZeros) {
  auto s = stripe_sample(40, 48);
  AugmentOptions opt;
  opt.crop_height = 64;
  opt.crop_width = 64;
  AugmentParams p;
  p.offset_x = 8;
  auto out = apply_augmentation(s, p, opt);
  using torch::indexing::Slice;
  EXPECT_TRUE(torch::equal(out.mask.index({Slice(0, 40), Slice(0, 40)}), s.mask.index({Slice(), Slice(8, 48)})));
  EXPECT_EQ(out.mask.index({Slice(40, 64)}).abs().sum().item<int64_t>(), 0);
  EXPECT_EQ(out.image.index({Slice(), Slice(40, 64)}).abs().sum().item<float>(), 0.0f);
}

TEST(Augment, RandomDrawsKeepInvariants) {
  auto s = stripe_sample(96, 64);
  AugmentOptions opt;
  opt.crop_height = 64;
  opt.crop_width = 48;
  std::mt19937_64 rng(17);
  int flips = 0;
  for (int i = 0; i < 1000; ++i) {
    auto p = draw_augment_params(96, 64, opt, rng);
    ASSERT_GE(p.scale, 0.5);
    ASSERT_LE(p.scale, 2.0);
    const auto sh = std::llround(96 * p.scale), sw = std::llround(64 * p.scale);
    ASSERT_GE(p.offset_y, 0);
    ASSERT_LE(p.offset_y, std::max<int64_t>(0, sh - 64));
    ASSERT_LE(p.offset_x, std::max<int64_t>(0, sw - 48));
    flips += p.flip;
    if (i % 50 != 0) continue;
    auto out = apply_augmentation(s, p, opt);
    ASSERT_EQ(out.image.sizes(), (std::vector<int64_t>{64, 48}));
    ASSERT_GE(out.mask.min().item<int64_t>(), 0);
    ASSERT_LE(out.mask.max().item<int64_t>(), 3);
  }
  EXPECT_GT(flips, 430);
  EXPECT_LT(flips, 570);
}

TEST(Augment, MaskStaysAlignedWithImage) {
  // Wherever the bilinear image is integral it came from a single stripe, and
  // the nearest-exact mask must carry that stripe's label.
  auto s = stripe_sample(64, 96);
  AugmentOptions opt;
  opt.crop_height = 64;
  opt.crop_width = 64;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 40; ++i) {
    auto out = augment(s, opt, rng);
    auto rounded = out.image.round();
    auto integral = (out.image - rounded).abs() < 1e-5;
    auto agree = rounded.to(torch::kLong) == out.mask;
    EXPECT_TRUE((agree | integral.logical_not()).all().item<bool>()) << "draw " << i;
    EXPECT_GT(integral.to(torch::kFloat64).mean().item<double>(), 0.6);
  }
}

TEST(Augment, DeriveSeedSeparatesStreams) {
  std::set<uint64_t> seen;
  for (uint64_t a = 0; a < 50; ++a)
    for (uint64_t b = 0; b < 5; ++b) seen.insert(derive_seed(7, a, b));
  EXPECT_EQ(seen.size(), 250u);
  EXPECT_EQ(derive_seed(7, 3, 1), derive_seed(7, 3, 1));
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    std::ostringstream s;
    s << "subject" << i;
    out.push_back(s.str());
  }
  return out;
}

TEST(Folds, PartitionSubjects) {
  auto split = make_folds(ids(109), 0);
  ASSERT_EQ(split.size(), 3u);
  std::vector<size_t> sizes;
  std::set<std::string> all;
  for (size_t k = 0; k < 3; ++k) {
    sizes.push_back(split.test_subjects(k).size());
    all.insert(split.test_subjects(k).begin(), split.test_subjects(k).end());
    auto train = split.train_subjects(k);
    EXPECT_EQ(train.size() + split.test_subjects(k).size(), 109u);
    for (const auto& id : split.test_subjects(k)) {
      EXPECT_FALSE(std::binary_search(train.begin(), train.end(), id));
    }
  }
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<size_t>{36, 36, 37}));
  EXPECT_EQ(all.size(), 109u);
}

TEST(Folds, DeterministicAndOrderIndependent) {
  auto a = ids(10);
  auto b = a;
  std::reverse(b.begin(), b.end());
  EXPECT_EQ(make_folds(a, 5).folds, make_folds(b, 5).folds);
  EXPECT_NE(make_folds(a, 5).folds, make_folds(a, 6).folds);
  auto three = make_folds(ids(3), 1);
  for (size_t k = 0; k < 3; ++k) EXPECT_EQ(three.test_subjects(k).size(), 1u);
}

TEST(Folds, Errors) {
  EXPECT_EQ(kind_of([] { make_folds(ids(2), 0); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { make_folds({"a", "b", "a", "c"}, 0); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { make_folds(ids(5), 0, 1); }), ErrorKind::kConfig);
}

TEST(Dataset, WriteLoadRoundTrip) {
  TempDir dir;
  std::vector<Sample> samples;
  for (uint64_t seed = 0; seed < 3; ++seed) samples.push_back(generate_phantom(seed, 64, 64));
  samples[1].index = 1;
  samples.push_back(samples[1]);
  samples.back().index = 0;
  write_dataset(dir.path(), samples);
  auto loaded = load_dataset(dir.path());
  ASSERT_EQ(loaded.size(), 4u);
  EXPECT_EQ(loaded[0].subject_id, "phantom0000");
  EXPECT_EQ(loaded[1].subject_id, "phantom0001");
  EXPECT_EQ(loaded[1].index, 0);
  EXPECT_EQ(loaded[2].index, 1);
  EXPECT_TRUE(torch::equal(loaded[2].mask, samples[1].mask));
  EXPECT_LE((loaded[2].image - samples[1].image).abs().max().item<float>(), 0.5f / 255.0f + 1e-6f);
  EXPECT_EQ(subject_ids(loaded).size(), 3u);
  EXPECT_EQ(select_subjects(loaded, {"phantom0001"}).size(), 2u);
}

TEST(Dataset, EmptyRootWarns) {
  TempDir dir;
  std::ostringstream captured;
  auto* old = std::clog.rdbuf(captured.rdbuf());
  auto loaded = load_dataset(dir.path());
  std::clog.rdbuf(old);
  EXPECT_TRUE(loaded.empty());
  EXPECT_NE(captured.str().find("warning"), std::string::npos);
  EXPECT_EQ(kind_of([&] { load_dataset(dir.path() / "missing"); }), ErrorKind::kIo);
}

TEST(Dataset, MissingMaskNamesFile) {
  TempDir dir;
  write_dataset(dir.path(), {generate_phantom(0, 64, 64)});
  fs::remove(dir.path() / "phantom0000" / "0000_mask.png");
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("0000_img.png"), std::string::npos) << e.what();
  }
}

TEST(Dataset, UnknownLabelIsRejected) {
  TempDir dir;
  write_dataset(dir.path(), {generate_phantom(0, 64, 64)});
  auto bad = torch::zeros({64, 64}, torch::kUInt8);
  bad[3][3] = 7;
  write_png_gray(dir.path() / "phantom0000" / "0000_mask.png", bad);
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("unknown label value 7"), std::string::npos) << e.what();
  }
}

TEST(Collate, NormalisesEachImage) {
  std::vector<Sample> batch = {generate_phantom(0, 64, 64), generate_phantom(1, 64, 64)};
  auto [images, masks] = collate(batch);
  EXPECT_EQ(images.sizes(), (std::vector<int64_t>{2, 1, 64, 64}));
  EXPECT_EQ(masks.sizes(), (std::vector<int64_t>{2, 64, 64}));
  for (int64_t b = 0; b < 2; ++b) {
    EXPECT_NEAR(images[b].mean().item<double>(), 0.0, 1e-5);
    EXPECT_NEAR(images[b].std(/*unbiased=*/false).item<double>(), 1.0, 1e-4);
  }
  auto flat = normalize_image(torch::full({4, 4}, 0.3f));
  EXPECT_TRUE(torch::isfinite(flat).all().item<bool>());
}

TEST(ImageIo, PaletteRoundTripAndOverlay) {
  TempDir dir;
  std::mt19937_64 rng(1);
  auto labels = testing_util::random_labels(rng, 9, 7).to(torch::kUInt8);
  write_png_palette(dir.path() / "m.png", labels, label_palette());
  EXPECT_TRUE(torch::equal(read_png_u8(dir.path() / "m.png"), labels));
  auto overlay = label_overlay(torch::zeros({9, 7}), labels.to(torch::kLong));
  EXPECT_EQ(overlay.sizes(), (std::vector<int64_t>{9, 7, 3}));
  EXPECT_EQ(kind_of([&] { read_png_u8(dir.path() / "none.png"); }), ErrorKind::kIo);
}

}  // namespace
}  // namespace sa2net
