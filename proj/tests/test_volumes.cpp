// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "recokd/nifti.hpp"
#include "recokd/volumes.hpp"
#include "support.hpp"

using namespace recokd;
using namespace recokd::io;

namespace {

LabelVolume ramp_labels() {
  std::vector<std::int32_t> ids(64);
  for (int i = 0; i < 64; ++i) ids[static_cast<std::size_t>(i)] = i;
  return LabelVolume::exclusive({4, 4, 4}, 63, ids);
}

}  // namespace

TEST(Nifti, LabelRoundTripIsByteIdentical) {
  auto dir = support::temp_dir("nifti_rt");
  write_nifti1(ramp_labels(), dir / "a.nii");
  auto back = read_labels(dir / "a.nii");
  EXPECT_EQ(back.ids, ramp_labels().ids);
  write_nifti1(back, dir / "b.nii");
  EXPECT_EQ(read_file_bytes(dir / "a.nii"), read_file_bytes(dir / "b.nii"));
}

TEST(Nifti, BigEndianReadsTheSameValues) {
  ImageVolume img;
  img.shape = {3, 2, 5};
  img.modalities = 2;
  img.spacing = {1.5, 0.75, 2.0};
  Rng rng(1);
  for (std::size_t i = 0; i < 60; ++i) img.data.push_back(rng.normal());
  auto le = encode_nifti1(img, NiftiDatatype::float64);
  auto be = to_big_endian(le);
  NiftiHeaderInfo li, bi;
  auto a = std::get<ImageVolume>(decode_nifti1(le, &li));
  auto b = std::get<ImageVolume>(decode_nifti1(be, &bi));
  EXPECT_FALSE(li.swapped);
  EXPECT_TRUE(bi.swapped);
  EXPECT_EQ(a.data, img.data);
  EXPECT_EQ(b.data, img.data);
  EXPECT_EQ(b.spacing, img.spacing);
  EXPECT_EQ(encode_nifti1(b, NiftiDatatype::float64), le);
}

TEST(Nifti, HeaderErrorsNameTheField) {
  auto bytes = encode_nifti1(ramp_labels());
  auto detached = bytes;
  std::memcpy(detached.data() + 344, "ni1\0", 4);
  try {
    decode_nifti1(detached);
    FAIL();
  } catch (const NiftiError& e) {
    EXPECT_EQ(e.kind(), NiftiError::Kind::unsupported_format);
    EXPECT_EQ(e.field(), "magic");
  }
  auto bad = bytes;
  std::memcpy(bad.data() + 344, "xyz\0", 4);
  try {
    decode_nifti1(bad);
    FAIL();
  } catch (const NiftiError& e) {
    EXPECT_EQ(e.kind(), NiftiError::Kind::bad_magic);
  }
  auto dt = bytes;
  const std::int16_t code = 512;
  std::memcpy(dt.data() + 70, &code, 2);
  try {
    decode_nifti1(dt);
    FAIL();
  } catch (const NiftiError& e) {
    EXPECT_EQ(e.kind(), NiftiError::Kind::unsupported_datatype);
    EXPECT_EQ(e.field(), "datatype");
  }
  auto cut = bytes;
  cut.resize(cut.size() - 1);
  try {
    decode_nifti1(cut);
    FAIL();
  } catch (const NiftiError& e) {
    EXPECT_EQ(e.kind(), NiftiError::Kind::truncated);
  }
}

TEST(Nifti, FloatImageRoundTripWithinFloat32) {
  auto dir = support::temp_dir("nifti_img");
  ImageVolume img;
  img.shape = {2, 3, 4};
  Rng rng(2);
  for (std::size_t i = 0; i < 24; ++i) img.data.push_back(rng.normal());
  write_nifti1(img, dir / "i.nii");
  auto back = read_image(dir / "i.nii");
  ASSERT_EQ(back.shape, img.shape);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(back.data[i], static_cast<double>(static_cast<float>(img.data[i])));
}

TEST(Nifti, LabelValue255Preserved) {
  std::vector<std::int32_t> ids(8, 0);
  ids[3] = 255;
  auto back = std::get<LabelVolume>(decode_nifti1(encode_nifti1(LabelVolume::exclusive({2, 2, 2}, 255, ids))));
  EXPECT_EQ(back.ids[3], 255);
}

TEST(Nifti, OversizedDimensionRejected) {
  ImageVolume img;
  img.shape = {40000, 1, 1};
  img.data.assign(40000, 0.0);
  try {
    encode_nifti1(img);
    FAIL();
  } catch (const NiftiError& e) {
    EXPECT_EQ(e.kind(), NiftiError::Kind::dimension_overflow);
  }
}

TEST(Nifti, MultiLabelRoundTrip) {
  std::vector<std::uint8_t> a(27, 0), b(27, 0);
  a[1] = a[2] = b[2] = b[26] = 1;
  auto vol = LabelVolume::multi_label({3, 3, 3}, {a, b});
  auto bytes = encode_nifti1(vol);
  auto back = std::get<LabelVolume>(decode_nifti1(bytes));
  EXPECT_EQ(back.mode, LabelMode::multi_label);
  EXPECT_EQ(back.grids, vol.grids);
  EXPECT_EQ(encode_nifti1(back), bytes);
}

TEST(Phantom, ZeroFractionsAreAllBackground) {
  PhantomSpec s;
  s.classes = {{0.0, ShapeKind::sphere}, {0.0, ShapeKind::shell}};
  auto p = generate_phantom(s);
  for (auto id : p.labels.ids) EXPECT_EQ(id, 0);
}

TEST(Phantom, Deterministic) {
  PhantomSpec s;
  s.seed = 42;
  s.classes = {{0.05, ShapeKind::ellipsoid}, {0.005, ShapeKind::sphere}};
  auto a = generate_phantom(s), b = generate_phantom(s);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.labels.ids, b.labels.ids);
  s.seed = 43;
  EXPECT_NE(generate_phantom(s).labels.ids, a.labels.ids);
}

TEST(Phantom, SphereFractionNearTarget) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhantomSpec s;
    s.seed = seed;
    s.classes = {{0.01, ShapeKind::sphere}};
    auto st = class_stats(generate_phantom(s).labels);
    EXPECT_GE(st.fractions[1], 0.005);
    EXPECT_LE(st.fractions[1], 0.015);
  }
}

TEST(Phantom, InfeasibleFractionThrows) {
  PhantomSpec s;
  s.classes = {{0.7, ShapeKind::sphere}, {0.4, ShapeKind::sphere}};
  EXPECT_THROW(generate_phantom(s), InvalidArgumentError);
}

TEST(Phantom, BackgroundDominatedProfile) {
  // About 95.5% background with one class well under 1%.
  PhantomSpec s;
  s.seed = 7;
  s.classes = {{0.04, ShapeKind::ellipsoid}, {0.005, ShapeKind::sphere}};
  auto st = class_stats(generate_phantom(s).labels);
  EXPECT_NEAR(st.background_fraction, 0.955, 0.02);
  EXPECT_LT(st.fractions[2], 0.01);
}

TEST(ClassStats, Counting) {
  std::vector<std::int32_t> ids(8, 0);
  ids[2] = 1;
  auto st = class_stats(LabelVolume::exclusive({2, 2, 2}, 1, ids));
  EXPECT_DOUBLE_EQ(st.background_fraction, 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(st.fractions[1], 1.0 / 8.0);
  ASSERT_TRUE(st.largest_to_smallest.has_value());
  EXPECT_DOUBLE_EQ(*st.largest_to_smallest, 1.0);
  auto none = class_stats(LabelVolume::exclusive({2, 2, 2}, 1, std::vector<std::int32_t>(8, 0)));
  EXPECT_FALSE(none.largest_to_smallest.has_value());
}

TEST(Downsample, IdentityAndConstant) {
  Rng rng(3);
  auto lab = support::labels({4, 4, 4}, 3, support::random_ids(64, 3, rng));
  EXPECT_EQ(downsample_labels(lab, {4, 4, 4}).ids, lab.ids);
  auto c = LabelVolume::exclusive({8, 8, 8}, 2, std::vector<std::int32_t>(512, 2));
  for (auto id : downsample_labels(c, {2, 4, 8}).ids) EXPECT_EQ(id, 2);
  EXPECT_THROW(downsample_labels(lab, {8, 8, 8}), GeometryError);
}

TEST(Downsample, MultiLabelOrPoolKeepsSingleVoxel) {
  std::vector<std::uint8_t> g(64, 0);
  g[Dims3{4, 4, 4}.index(3, 1, 2)] = 1;
  auto d = downsample_labels(LabelVolume::multi_label({4, 4, 4}, {g}), {2, 2, 2});
  int n = 0;
  for (auto x : d.grids[0]) n += x;
  EXPECT_EQ(n, 1);
  EXPECT_EQ(d.grids[0][(Dims3{2, 2, 2}.index(1, 0, 1))], 1);
}
