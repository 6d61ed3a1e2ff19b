// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace recokd::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError("metric grids differ in size: " + std::to_string(a) + " vs " + std::to_string(b));
}

// Nearest squared distance from each point of `from` to any point of `to`.
void directed(const std::vector<std::size_t>& from, const std::vector<std::size_t>& to, io::Dims3 s,
              std::vector<double>& out) {
  std::vector<long> tz(to.size()), ty(to.size()), tx(to.size());
  for (std::size_t j = 0; j < to.size(); ++j) {
    tz[j] = static_cast<long>(to[j] / (s.h * s.w));
    ty[j] = static_cast<long>(to[j] / s.w % s.h);
    tx[j] = static_cast<long>(to[j] % s.w);
  }
  for (auto v : from) {
    const long z = static_cast<long>(v / (s.h * s.w)), y = static_cast<long>(v / s.w % s.h),
               x = static_cast<long>(v % s.w);
    long best = std::numeric_limits<long>::max();
    for (std::size_t j = 0; j < to.size(); ++j) {
      const long dz = z - tz[j], dy = y - ty[j], dx = x - tx[j];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(static_cast<double>(best)));
  }
}

}  // namespace

double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
  check_sizes(pred.size(), truth.size());
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t v = 0; v < pred.size(); ++v) {
    p += pred[v] != 0;
    g += truth[v] != 0;
    both += pred[v] && truth[v];
  }
  if (p + g == 0) return kNaN;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::size_t> boundary_voxels(const std::vector<std::uint8_t>& mask, io::Dims3 s) {
  check_sizes(mask.size(), s.voxels());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.d; ++i) {
    for (std::size_t j = 0; j < s.h; ++j) {
      for (std::size_t k = 0; k < s.w; ++k) {
        const std::size_t v = s.index(i, j, k);
        if (!mask[v]) continue;
        const bool edge = i == 0 || j == 0 || k == 0 || i + 1 == s.d || j + 1 == s.h || k + 1 == s.w;
        if (edge || !mask[v - s.h * s.w] || !mask[v + s.h * s.w] || !mask[v - s.w] || !mask[v + s.w] ||
            !mask[v - 1] || !mask[v + 1]) {
          out.push_back(v);
        }
      }
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth, io::Dims3 shape) {
  check_sizes(pred.size(), truth.size());
  const auto bp = boundary_voxels(pred, shape);
  const auto bg = boundary_voxels(truth, shape);
  if (bp.empty() || bg.empty()) return kNaN;
  std::vector<double> d;
  d.reserve(bp.size() + bg.size());
  directed(bp, bg, shape, d);
  directed(bg, bp, shape, d);
  return percentile(std::move(d), 95.0);
}

std::vector<std::uint8_t> class_grid(const std::vector<std::int32_t>& ids, std::int32_t cls) {
  std::vector<std::uint8_t> g(ids.size());
  for (std::size_t v = 0; v < ids.size(); ++v) g[v] = ids[v] == cls ? 1 : 0;
  return g;
}

}  // namespace recokd::metrics
