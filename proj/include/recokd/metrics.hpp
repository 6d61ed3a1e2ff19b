// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Overlap and surface-distance metrics on binary voxel grids. Undefined
// values are quiet NaN (serialized as null).

#pragma once

#include <cstdint>
#include <vector>

#include "recokd/volumes.hpp"

namespace recokd::metrics {

/// 2|P & G| / (|P| + |G|); NaN when both grids are empty.
double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);

/// Voxels of `mask` with at least one 6-neighbour outside the mask or outside
/// the volume, as linear indices in ascending order.
std::vector<std::size_t> boundary_voxels(const std::vector<std::uint8_t>& mask, io::Dims3 shape);

/// 95th percentile (linear interpolation) of the pooled directed surface
/// distances P->G and G->P, in voxel units. NaN when either grid is empty.
double hd95(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth, io::Dims3 shape);

/// Linear-interpolation percentile of `values` (sorted internally), q in [0,100].
double percentile(std::vector<double> values, double q);

/// Binary grid of voxels whose id equals `cls`.
std::vector<std::uint8_t> class_grid(const std::vector<std::int32_t>& ids, std::int32_t cls);

}  // namespace recokd::metrics
