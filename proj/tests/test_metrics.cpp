// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "recokd/metrics.hpp"
#include "support.hpp"

using namespace recokd;
using io::Dims3;

namespace {

std::vector<std::uint8_t> cube(Dims3 s, std::size_t lo, std::size_t hi, std::size_t shift = 0) {
  std::vector<std::uint8_t> m(s.voxels(), 0);
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = lo; j < hi; ++j)
      for (std::size_t k = lo + shift; k < hi + shift; ++k) m[s.index(i, j, k)] = 1;
  return m;
}

std::vector<std::uint8_t> random_blob(Dims3 s, double p, Rng& rng) {
  std::vector<std::uint8_t> m(s.voxels());
  for (auto& x : m) x = rng.uniform() < p ? 1 : 0;
  return m;
}

}  // namespace

TEST(Dice, PerfectAndEmpty) {
  const Dims3 s{8, 8, 8};
  auto a = cube(s, 2, 5);
  EXPECT_EQ(metrics::dice(a, a), 1.0);
  EXPECT_EQ(metrics::hd95(a, a, s), 0.0);
  std::vector<std::uint8_t> z(s.voxels(), 0);
  EXPECT_TRUE(std::isnan(metrics::dice(z, z)));
  EXPECT_EQ(metrics::dice(a, z), 0.0);
  EXPECT_TRUE(std::isnan(metrics::hd95(a, z, s)));
}

TEST(Dice, ShiftedCubeMatchesOracles) {
  const Dims3 s{8, 8, 8};
  auto g = cube(s, 2, 5);
  auto p = cube(s, 2, 5, 1);
  EXPECT_DOUBLE_EQ(metrics::dice(p, g), 2.0 * 18.0 / 54.0);
  EXPECT_DOUBLE_EQ(metrics::hd95(p, g, s), oracle::hd95(p, g, s));
  EXPECT_DOUBLE_EQ(metrics::hd95(p, g, s), 1.0);
}

TEST(Boundary, FaceNeighbourRule) {
  const Dims3 s{5, 5, 5};
  auto m = cube(s, 1, 4);  // 3^3 block: only the centre is interior
  auto b = metrics::boundary_voxels(m, s);
  EXPECT_EQ(b.size(), 26u);
  std::vector<std::uint8_t> full(s.voxels(), 1);
  EXPECT_EQ(metrics::boundary_voxels(full, s).size(), 125u - 27u);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(metrics::percentile({4, 1, 3, 2}, 50), 2.5);
  EXPECT_DOUBLE_EQ(metrics::percentile({0, 10}, 95), 9.5);
  EXPECT_DOUBLE_EQ(metrics::percentile({7}, 95), 7.0);
}

TEST(Metrics, RandomVolumesMatchBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Dims3 s{1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12)};
    auto p = random_blob(s, rng.uniform(0.0, 0.6), rng);
    auto g = random_blob(s, rng.uniform(0.0, 0.6), rng);
    const double d = metrics::dice(p, g), od = oracle::dice(p, g);
    if (std::isnan(od)) {
      EXPECT_TRUE(std::isnan(d));
    } else {
      EXPECT_NEAR(d, od, 1e-12);
    }
    const double h = metrics::hd95(p, g, s), oh = oracle::hd95(p, g, s);
    if (std::isnan(oh)) {
      EXPECT_TRUE(std::isnan(h));
    } else {
      EXPECT_NEAR(h, oh, 1e-12);
    }
  }
}

TEST(Metrics, ClassGrid) {
  auto g = metrics::class_grid({0, 2, 1, 2}, 2);
  EXPECT_EQ(g, (std::vector<std::uint8_t>{0, 1, 0, 1}));
}
