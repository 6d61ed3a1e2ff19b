// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-file NIfTI-1 (.nii) reader and writer.
//
// Supported: 348-byte header, magic "n+1\0", vox_offset >= 352, datatypes
// uint8 (2), int16 (4), float32 (16), float64 (64), dim[0] in {3, 4}, either
// byte order. NIfTI stores x fastest, then y, z, t; this maps onto our
// row-major [t][d][h][w] layout with w = x, h = y, d = z, so voxel memory
// order is unchanged and only the names differ.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "recokd/volumes.hpp"

namespace recokd::io {

class NiftiError : public Error {
 public:
  enum class Kind { bad_magic, unsupported_format, unsupported_datatype, truncated, dimension_overflow, io };
  NiftiError(Kind kind, const std::string& field, const std::string& message)
      : Error("nifti " + field + ": " + message), kind_(kind), field_(field) {}
  Kind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  Kind kind_;
  std::string field_;
};

enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, float64 = 64 };

struct NiftiHeaderInfo {
  NiftiDatatype datatype;
  bool swapped = false;  // file byte order differs from little-endian
  std::int16_t dim0 = 3;
  std::vector<std::size_t> dims;  // dim[1..dim0]
  std::array<double, 3> pixdim{1, 1, 1};
  double scl_slope = 0.0, scl_inter = 0.0;
  std::size_t vox_offset = 352;
};

using Volume = std::variant<ImageVolume, LabelVolume>;

/// Integer datatypes load as labels (dim[0] = 4 means multi-label grids),
/// float datatypes as images (dim[4] = modalities).
Volume read_nifti1(const std::filesystem::path& path);
Volume decode_nifti1(const std::vector<std::uint8_t>& bytes, NiftiHeaderInfo* info = nullptr);

ImageVolume read_image(const std::filesystem::path& path);
/// `num_foreground` of exclusive volumes is inferred as the max id unless given.
LabelVolume read_labels(const std::filesystem::path& path, std::size_t num_foreground = 0);

/// Little-endian output; images default to float32, labels to uint8.
std::vector<std::uint8_t> encode_nifti1(const ImageVolume& vol, NiftiDatatype type = NiftiDatatype::float32);
std::vector<std::uint8_t> encode_nifti1(const LabelVolume& vol, NiftiDatatype type = NiftiDatatype::uint8);
void write_nifti1(const ImageVolume& vol, const std::filesystem::path& path,
                  NiftiDatatype type = NiftiDatatype::float32);
void write_nifti1(const LabelVolume& vol, const std::filesystem::path& path,
                  NiftiDatatype type = NiftiDatatype::uint8);

/// Byte-swaps every header field and voxel of a little-endian file image.
std::vector<std::uint8_t> to_big_endian(const std::vector<std::uint8_t>& little);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace recokd::io
