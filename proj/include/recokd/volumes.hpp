// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image and label volumes, synthetic phantoms, and class statistics.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recokd/errors.hpp"

namespace recokd::io {

/// Spatial extent in (depth, height, width) order; width varies fastest.
struct Dims3 {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t voxels() const { return d * h * w; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * h + j) * w + k; }
  bool operator==(const Dims3&) const = default;
  std::string str() const;
};

struct ImageVolume {
  Dims3 shape;
  std::size_t modalities = 1;
  /// Row-major [modality][d][h][w].
  std::vector<double> data;
  /// Voxel spacing in mm, (d, h, w) order. Metadata only.
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  void validate() const;
};

enum class LabelMode { exclusive, multi_label };

struct LabelVolume {
  Dims3 shape;
  LabelMode mode = LabelMode::exclusive;
  /// Number of foreground classes R; class ids run 0..R with 0 = background.
  std::size_t num_foreground = 0;
  /// Exclusive mode: one class id per voxel.
  std::vector<std::int32_t> ids;
  /// Multi-label mode: R binary grids, grids[r-1] holds class r.
  std::vector<std::vector<std::uint8_t>> grids;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  static LabelVolume exclusive(Dims3 shape, std::size_t num_foreground, std::vector<std::int32_t> ids);
  static LabelVolume multi_label(Dims3 shape, std::vector<std::vector<std::uint8_t>> grids);

  /// True if voxel v carries class r (r = 0 is the complement of all
  /// foreground classes in multi-label mode).
  bool has(std::size_t r, std::size_t v) const;
  void validate() const;
};

struct ClassStats {
  std::size_t total_voxels = 0;
  /// Index r = class id; counts[0] is background.
  std::vector<std::size_t> counts;
  std::vector<double> fractions;
  double background_fraction = 0.0;
  /// Largest-to-smallest foreground count ratio. Infinity when some foreground
  /// class is empty; nullopt when no foreground class is present at all.
  std::optional<double> largest_to_smallest;
};

/// Exact per-class voxel counts. Multi-label voxels count once per class.
ClassStats class_stats(const LabelVolume& labels);
ClassStats merge_stats(const std::vector<ClassStats>& parts);
std::string stats_csv(const ClassStats& stats);
std::string stats_json(const ClassStats& stats);

/// Resample labels to `target`. Exclusive volumes take the label at the
/// nearest source cell centre; multi-label grids OR-pool the covered block.
LabelVolume downsample_labels(const LabelVolume& labels, Dims3 target);

enum class ShapeKind { sphere, ellipsoid, shell };

struct ClassSpec {
  double target_fraction = 0.0;
  ShapeKind kind = ShapeKind::sphere;
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  Dims3 shape{32, 32, 32};
  std::vector<ClassSpec> classes;
  double noise_sigma = 0.1;
  std::size_t modalities = 1;
};

struct Phantom {
  ImageVolume image;
  LabelVolume labels;
};

/// Deterministic synthetic volume: one random geometric region per class,
/// painted in order (later classes overwrite earlier ones), with intensity
/// equal to a per-class mean plus Gaussian noise.
Phantom generate_phantom(const PhantomSpec& spec);

/// Mean intensity of class r in modality m used by the phantom generator.
double phantom_class_mean(std::size_t r, std::size_t m);

ShapeKind parse_shape_kind(const std::string& name);
std::string to_string(ShapeKind kind);

}  // namespace recokd::io
