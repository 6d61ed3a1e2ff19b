// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/masks.hpp"

#include "recokd/nifti.hpp"
#include "recokd/ops.hpp"

namespace recokd::masks {

RegionMaskSet build_region_masks(const io::LabelVolume& labels) {
  RegionMaskSet set;
  set.shape = labels.shape;
  set.mode = labels.mode;
  const std::size_t n = labels.shape.voxels();
  set.grids.assign(labels.num_foreground + 1, std::vector<std::uint8_t>(n, 0));
  for (std::size_t r = 0; r <= labels.num_foreground; ++r) {
    for (std::size_t v = 0; v < n; ++v) set.grids[r][v] = labels.has(r, v) ? 1 : 0;
  }
  return set;
}

ScaleMask build_scale_mask(const RegionMaskSet& regions) {
  ScaleMask s;
  s.shape = regions.shape;
  const std::size_t n = regions.shape.voxels();
  s.counts.assign(regions.num_regions(), 0);
  for (std::size_t r = 0; r < regions.num_regions(); ++r) {
    for (auto x : regions.grids[r]) s.counts[r] += x;
  }
  s.values.assign(n, 0.0);
  s.owner.assign(n, -1);
  for (std::size_t v = 0; v < n; ++v) {
    std::int32_t best = -1;
    for (std::size_t r = 0; r < regions.num_regions(); ++r) {
      if (!regions.grids[r][v]) continue;
      // Strict < keeps the lowest index among equal counts.
      if (best < 0 || s.counts[r] < s.counts[static_cast<std::size_t>(best)]) best = static_cast<std::int32_t>(r);
    }
    if (best < 0) {
      throw DegenerateInputError("voxel " + std::to_string(v) + " is not covered by any region mask");
    }
    s.owner[v] = best;
    s.values[v] = 1.0 / static_cast<double>(s.counts[static_cast<std::size_t>(best)]);
  }
  return s;
}

ActivationMasks build_activation_masks(const Tensor& features, double temperature) {
  if (features.dim() != 4) {
    throw ShapeError("activation masks expect features [C,D,H,W], got " + to_string(features.shape()));
  }
  if (!(temperature > 0.0)) {
    throw InvalidArgumentError("temperature must be positive, got " + std::to_string(temperature));
  }
  const auto& s = features.shape();
  const double voxels = static_cast<double>(s[1] * s[2] * s[3]);
  const double channels = static_cast<double>(s[0]);
  ActivationMasks m;
  m.temperature = temperature;
  Tensor magnitude = abs(features);
  m.spatial_stat = mean(magnitude, {0});
  m.channel_stat = mean(magnitude, {1, 2, 3});
  m.spatial = scale(softmax_temperature(m.spatial_stat, {0, 1, 2}, temperature), voxels);
  m.channel = scale(softmax_temperature(m.channel_stat, {0}, temperature), channels);
  return m;
}

MaskBundle build_stage_masks(const io::LabelVolume& labels, const Tensor& teacher_features, double temperature) {
  if (teacher_features.dim() != 4) {
    throw ShapeError("stage masks expect teacher features [C,D,H,W], got " + to_string(teacher_features.shape()));
  }
  const auto& s = teacher_features.shape();
  if (labels.shape != io::Dims3{s[1], s[2], s[3]}) {
    throw ShapeError("labels " + labels.shape.str() + " do not match feature spatial shape " + to_string(s));
  }
  MaskBundle b;
  b.regions = build_region_masks(labels);
  b.scale = build_scale_mask(b.regions);
  b.activation = build_activation_masks(detach(teacher_features), temperature);
  return b;
}

std::vector<double> selected_scale(const ScaleMask& scale, RegionSelection selection) {
  std::vector<double> w(scale.values.size(), 0.0);
  for (std::size_t v = 0; v < w.size(); ++v) {
    const bool background = scale.owner[v] == 0;
    const bool keep = selection == RegionSelection::all || (selection == RegionSelection::background) == background;
    if (keep) w[v] = scale.values[v];
  }
  return w;
}

void write_mask_nifti(const std::vector<double>& grid, io::Dims3 shape, const std::filesystem::path& path) {
  io::ImageVolume vol;
  vol.shape = shape;
  vol.data = grid;
  io::write_nifti1(vol, path);
}

}  // namespace recokd::masks
