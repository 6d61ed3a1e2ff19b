// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-stage weighting masks for structure-aware region distillation:
// binary region masks, the class-size scale mask, and temperature-softmax
// spatial/channel activation masks.

#pragma once

#include <filesystem>
#include <vector>

#include "recokd/tensor.hpp"
#include "recokd/volumes.hpp"

namespace recokd::masks {

/// R + 1 binary grids; grids[0] is background.
struct RegionMaskSet {
  io::Dims3 shape;
  io::LabelMode mode = io::LabelMode::exclusive;
  std::vector<std::vector<std::uint8_t>> grids;

  std::size_t num_regions() const { return grids.size(); }
};

struct ScaleMask {
  io::Dims3 shape;
  /// 1 / N_r of the class that owns each voxel.
  std::vector<double> values;
  /// N_r per region, background first.
  std::vector<std::size_t> counts;
  /// Owning class per voxel: the covering class with the fewest voxels,
  /// lowest index on equal counts.
  std::vector<std::int32_t> owner;
};

struct ActivationMasks {
  Tensor spatial_stat;  // A_S, [D,H,W]: channel mean of |F|
  Tensor channel_stat;  // A_C, [C]: voxel mean of |F|
  Tensor spatial;       // V_S, [D,H,W], mean 1
  Tensor channel;       // V_C, [C], mean 1
  double temperature = 1.0;
};

struct MaskBundle {
  RegionMaskSet regions;
  ScaleMask scale;
  ActivationMasks activation;  // from the (detached) teacher features
};

enum class RegionSelection { all, foreground, background };

RegionMaskSet build_region_masks(const io::LabelVolume& labels_at_stage);

/// Throws DegenerateInputError if some voxel is covered by no region.
ScaleMask build_scale_mask(const RegionMaskSet& regions);

/// `features` is [C,D,H,W]. Differentiable when `features` requires grad.
ActivationMasks build_activation_masks(const Tensor& features, double temperature);

/// Labels must already match the spatial shape of `teacher_features`.
MaskBundle build_stage_masks(const io::LabelVolume& labels, const Tensor& teacher_features, double temperature);

/// Per-voxel scale weights restricted to voxels whose owner is selected.
std::vector<double> selected_scale(const ScaleMask& scale, RegionSelection selection);

/// Debug dump of a mask grid as a float32 NIfTI volume.
void write_mask_nifti(const std::vector<double>& grid, io::Dims3 shape, const std::filesystem::path& path);

}  // namespace recokd::masks
