// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/volumes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "recokd/rng.hpp"

namespace recokd::io {

std::string Dims3::str() const {
  return "(" + std::to_string(d) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

void ImageVolume::validate() const {
  if (shape.voxels() == 0 || modalities == 0) throw InvalidArgumentError("image volume has an empty extent");
  if (data.size() != modalities * shape.voxels()) {
    throw ShapeError("image data length " + std::to_string(data.size()) + " != modalities x " + shape.str());
  }
  for (double s : spacing) {
    if (!(s > 0.0)) throw InvalidArgumentError("image spacing components must be positive");
  }
}

LabelVolume LabelVolume::exclusive(Dims3 shape, std::size_t num_foreground, std::vector<std::int32_t> ids) {
  LabelVolume v;
  v.shape = shape;
  v.mode = LabelMode::exclusive;
  v.num_foreground = num_foreground;
  v.ids = std::move(ids);
  v.validate();
  return v;
}

LabelVolume LabelVolume::multi_label(Dims3 shape, std::vector<std::vector<std::uint8_t>> grids) {
  LabelVolume v;
  v.shape = shape;
  v.mode = LabelMode::multi_label;
  v.num_foreground = grids.size();
  v.grids = std::move(grids);
  v.validate();
  return v;
}

bool LabelVolume::has(std::size_t r, std::size_t v) const {
  if (mode == LabelMode::exclusive) return ids[v] == static_cast<std::int32_t>(r);
  if (r > 0) return grids[r - 1][v] != 0;
  for (const auto& g : grids) {
    if (g[v]) return false;
  }
  return true;
}

void LabelVolume::validate() const {
  const std::size_t n = shape.voxels();
  if (n == 0) throw InvalidArgumentError("label volume has an empty extent");
  if (mode == LabelMode::exclusive) {
    if (ids.size() != n) throw ShapeError("label id count " + std::to_string(ids.size()) + " != voxels of " + shape.str());
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) > num_foreground) {
        throw InvalidArgumentError("class id " + std::to_string(id) + " outside [0, " + std::to_string(num_foreground) + "]");
      }
    }
  } else {
    if (grids.size() != num_foreground) throw ShapeError("multi-label volume needs one grid per foreground class");
    for (const auto& g : grids) {
      if (g.size() != n) throw ShapeError("multi-label grid size != voxels of " + shape.str());
      for (auto x : g) {
        if (x > 1) throw InvalidArgumentError("multi-label grids must be binary");
      }
    }
  }
}

namespace {

void finish_stats(ClassStats& s) {
  s.fractions.resize(s.counts.size());
  for (std::size_t r = 0; r < s.counts.size(); ++r) {
    s.fractions[r] = s.total_voxels ? static_cast<double>(s.counts[r]) / static_cast<double>(s.total_voxels) : 0.0;
  }
  s.background_fraction = s.fractions.empty() ? 0.0 : s.fractions[0];
  s.largest_to_smallest.reset();
  if (s.counts.size() <= 1) return;
  auto fg_begin = s.counts.begin() + 1;
  std::size_t hi = *std::max_element(fg_begin, s.counts.end());
  std::size_t lo = *std::min_element(fg_begin, s.counts.end());
  if (hi == 0) return;
  s.largest_to_smallest = lo == 0 ? std::numeric_limits<double>::infinity()
                                  : static_cast<double>(hi) / static_cast<double>(lo);
}

}  // namespace

ClassStats class_stats(const LabelVolume& labels) {
  ClassStats s;
  s.total_voxels = labels.shape.voxels();
  s.counts.assign(labels.num_foreground + 1, 0);
  if (labels.mode == LabelMode::exclusive) {
    for (auto id : labels.ids) ++s.counts[static_cast<std::size_t>(id)];
  } else {
    for (std::size_t v = 0; v < s.total_voxels; ++v) {
      for (std::size_t r = 0; r <= labels.num_foreground; ++r) {
        if (labels.has(r, v)) ++s.counts[r];
      }
    }
  }
  finish_stats(s);
  return s;
}

ClassStats merge_stats(const std::vector<ClassStats>& parts) {
  ClassStats s;
  for (const auto& p : parts) {
    s.total_voxels += p.total_voxels;
    if (p.counts.size() > s.counts.size()) s.counts.resize(p.counts.size(), 0);
    for (std::size_t r = 0; r < p.counts.size(); ++r) s.counts[r] += p.counts[r];
  }
  finish_stats(s);
  return s;
}

std::string stats_csv(const ClassStats& stats) {
  std::ostringstream os;
  os.precision(17);
  os << "class_id,voxels,fraction\n";
  for (std::size_t r = 0; r < stats.counts.size(); ++r) os << r << ',' << stats.counts[r] << ',' << stats.fractions[r] << '\n';
  return os.str();
}

std::string stats_json(const ClassStats& stats) {
  nlohmann::ordered_json j;
  j["total_voxels"] = stats.total_voxels;
  j["background_fraction"] = stats.background_fraction;
  auto classes = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < stats.counts.size(); ++r) {
    classes.push_back({{"class_id", r}, {"voxels", stats.counts[r]}, {"fraction", stats.fractions[r]}});
  }
  j["classes"] = classes;
  if (!stats.largest_to_smallest) {
    j["largest_to_smallest_ratio"] = nullptr;
  } else if (std::isinf(*stats.largest_to_smallest)) {
    j["largest_to_smallest_ratio"] = "inf";
  } else {
    j["largest_to_smallest_ratio"] = *stats.largest_to_smallest;
  }
  return j.dump(2) + "\n";
}

LabelVolume downsample_labels(const LabelVolume& labels, Dims3 target) {
  const Dims3 src = labels.shape;
  const std::size_t tdims[3] = {target.d, target.h, target.w};
  const std::size_t sdims[3] = {src.d, src.h, src.w};
  for (int a = 0; a < 3; ++a) {
    if (tdims[a] < 1 || tdims[a] > sdims[a]) {
      throw GeometryError("cannot downsample labels " + src.str() + " to " + target.str());
    }
  }
  if (target == src) return labels;

  // Nearest source cell centre, and the covered block [lo, hi), per axis.
  std::vector<std::size_t> centre[3], lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    for (std::size_t t = 0; t < tdims[a]; ++t) {
      centre[a].push_back(((2 * t + 1) * sdims[a]) / (2 * tdims[a]));
      lo[a].push_back((t * sdims[a]) / tdims[a]);
      hi[a].push_back(((t + 1) * sdims[a] + tdims[a] - 1) / tdims[a]);
    }
  }

  LabelVolume out;
  out.shape = target;
  out.mode = labels.mode;
  out.num_foreground = labels.num_foreground;
  out.spacing = {labels.spacing[0] * static_cast<double>(src.d) / static_cast<double>(target.d),
                 labels.spacing[1] * static_cast<double>(src.h) / static_cast<double>(target.h),
                 labels.spacing[2] * static_cast<double>(src.w) / static_cast<double>(target.w)};
  if (labels.mode == LabelMode::exclusive) {
    out.ids.resize(target.voxels());
    for (std::size_t i = 0; i < target.d; ++i)
      for (std::size_t j = 0; j < target.h; ++j)
        for (std::size_t k = 0; k < target.w; ++k)
          out.ids[target.index(i, j, k)] = labels.ids[src.index(centre[0][i], centre[1][j], centre[2][k])];
    return out;
  }
  out.grids.assign(labels.grids.size(), std::vector<std::uint8_t>(target.voxels(), 0));
  for (std::size_t g = 0; g < labels.grids.size(); ++g) {
    const auto& in = labels.grids[g];
    auto& dst = out.grids[g];
    for (std::size_t i = 0; i < target.d; ++i)
      for (std::size_t j = 0; j < target.h; ++j)
        for (std::size_t k = 0; k < target.w; ++k) {
          std::uint8_t any = 0;
          for (std::size_t si = lo[0][i]; si < hi[0][i] && !any; ++si)
            for (std::size_t sj = lo[1][j]; sj < hi[1][j] && !any; ++sj)
              for (std::size_t sk = lo[2][k]; sk < hi[2][k] && !any; ++sk) any = in[src.index(si, sj, sk)];
          dst[target.index(i, j, k)] = any;
        }
  }
  return out;
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "ellipsoid") return ShapeKind::ellipsoid;
  if (name == "shell") return ShapeKind::shell;
  throw InvalidArgumentError("unknown shape kind '" + name + "'");
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::ellipsoid: return "ellipsoid";
    case ShapeKind::shell: return "shell";
  }
  return "?";
}

double phantom_class_mean(std::size_t r, std::size_t m) { return static_cast<double>(r) * (1.0 + 0.5 * static_cast<double>(m)); }

namespace {

struct Region {
  ShapeKind kind;
  std::array<double, 3> centre;
  std::array<double, 3> axes;  // unit-volume axis ratios
  double inner = 0.0;          // shell inner/outer radius ratio

  bool contains(double scale, double i, double j, double k) const {
    const double p[3] = {i - centre[0], j - centre[1], k - centre[2]};
    double q = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double t = p[a] / (scale * axes[a]);
      q += t * t;
    }
    return q <= 1.0 && (kind != ShapeKind::shell || q >= inner * inner);
  }

  std::size_t count(double scale, Dims3 dims) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < dims.d; ++i)
      for (std::size_t j = 0; j < dims.h; ++j)
        for (std::size_t k = 0; k < dims.w; ++k) n += contains(scale, double(i), double(j), double(k));
    return n;
  }
};

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  const Dims3 dims = spec.shape;
  if (dims.d < 8 || dims.h < 8 || dims.w < 8) throw InvalidArgumentError("phantom dims must be >= 8, got " + dims.str());
  if (spec.modalities < 1) throw InvalidArgumentError("phantom needs at least one modality");
  if (!(spec.noise_sigma >= 0.0)) throw InvalidArgumentError("noise_sigma must be >= 0");
  double total = 0.0;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    double f = spec.classes[c].target_fraction;
    if (!(f >= 0.0)) throw InvalidArgumentError("class " + std::to_string(c + 1) + " target_fraction must be >= 0");
    total += f;
  }
  if (!(total < 1.0)) throw InvalidArgumentError("class target fractions must sum to < 1");

  Rng rng(spec.seed);
  const std::size_t nvox = dims.voxels();
  const std::size_t R = spec.classes.size();
  std::vector<std::int32_t> ids(nvox, 0);
  const double extent[3] = {double(dims.d), double(dims.h), double(dims.w)};

  for (std::size_t c = 0; c < R; ++c) {
    const ClassSpec& cs = spec.classes[c];
    const double target = cs.target_fraction * static_cast<double>(nvox);
    if (std::llround(target) == 0) continue;

    Region region{cs.kind, {}, {1.0, 1.0, 1.0}, 0.0};
    if (cs.kind == ShapeKind::ellipsoid) {
      double a = rng.uniform(0.6, 1.4), b = rng.uniform(0.6, 1.4);
      double g = std::cbrt(a * b);
      region.axes = {a / g, b / g, g * g / (a * b)};
    } else if (cs.kind == ShapeKind::shell) {
      region.inner = rng.uniform(0.5, 0.75);
    }
    const double unit_volume = 4.0 / 3.0 * std::numbers::pi * (1.0 - std::pow(region.inner, 3));
    const double radius = std::cbrt(target / unit_volume);
    for (int a = 0; a < 3; ++a) {
      const double half = std::ceil(radius * region.axes[a]);
      if (2.0 * half + 1.0 > extent[a]) {
        throw InvalidArgumentError("class " + std::to_string(c + 1) + " with target_fraction " +
                                   std::to_string(cs.target_fraction) + " cannot fit in " + dims.str());
      }
      region.centre[a] = rng.uniform(half, extent[a] - 1.0 - half);
    }
    // Bisect the scale so the rasterized voxel count is closest to target.
    double lo = 0.5 * radius, hi = 1.5 * radius;
    double best = radius;
    double best_err = std::abs(double(region.count(radius, dims)) - target);
    for (int it = 0; it < 24; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double n = double(region.count(mid, dims));
      if (std::abs(n - target) < best_err) {
        best_err = std::abs(n - target);
        best = mid;
      }
      (n < target ? lo : hi) = mid;
    }
    for (std::size_t i = 0; i < dims.d; ++i)
      for (std::size_t j = 0; j < dims.h; ++j)
        for (std::size_t k = 0; k < dims.w; ++k)
          if (region.contains(best, double(i), double(j), double(k))) ids[dims.index(i, j, k)] = static_cast<std::int32_t>(c + 1);
  }

  Phantom p;
  p.labels = LabelVolume::exclusive(dims, R, std::move(ids));
  p.image.shape = dims;
  p.image.modalities = spec.modalities;
  p.image.data.resize(spec.modalities * nvox);
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    for (std::size_t v = 0; v < nvox; ++v) {
      const double mu = phantom_class_mean(static_cast<std::size_t>(p.labels.ids[v]), m);
      p.image.data[m * nvox + v] = mu + spec.noise_sigma * rng.normal();
    }
  }
  return p;
}

}  // namespace recokd::io
