// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace recokd::io {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;
constexpr std::size_t kMaxDim = 32767;

// Offsets of the fixed NIfTI-1 header fields we touch.
constexpr std::size_t kDim = 40, kDatatype = 70, kBitpix = 72, kPixdim = 76, kVoxOffsetField = 108,
                      kSclSlope = 112, kSclInter = 116, kXyztUnits = 123, kMagic = 344;

// Every multi-byte numeric header field: (offset, width, count).
struct Field {
  std::size_t offset, width, count;
};
constexpr Field kNumericFields[] = {
    {0, 4, 1},   {32, 4, 1},  {36, 2, 1},   {40, 2, 8},  {56, 4, 3},  {68, 2, 4},  {76, 4, 8},
    {108, 4, 3}, {120, 2, 1}, {124, 4, 4},  {140, 4, 2}, {252, 2, 2}, {256, 4, 6}, {280, 4, 12},
};

static_assert(std::endian::native == std::endian::little, "NIfTI codec assumes a little-endian host");

void swap_bytes(std::uint8_t* p, std::size_t width) { std::reverse(p, p + width); }

template <class T>
T load(const std::vector<std::uint8_t>& b, std::size_t offset, bool swapped) {
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, b.data() + offset, sizeof(T));
  if (swapped) swap_bytes(tmp, sizeof(T));
  T v;
  std::memcpy(&v, tmp, sizeof(T));
  return v;
}

template <class T>
void store(std::vector<std::uint8_t>& b, std::size_t offset, T v) {
  std::memcpy(b.data() + offset, &v, sizeof(T));
}

std::size_t datatype_width(NiftiDatatype t) {
  switch (t) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::float32: return 4;
    case NiftiDatatype::float64: return 8;
  }
  return 0;
}

bool is_integer(NiftiDatatype t) { return t == NiftiDatatype::uint8 || t == NiftiDatatype::int16; }

NiftiHeaderInfo parse_header(const std::vector<std::uint8_t>& b) {
  using K = NiftiError::Kind;
  if (b.size() < kHeaderSize) {
    throw NiftiError(K::truncated, "sizeof_hdr", "file has " + std::to_string(b.size()) + " bytes, header needs 348");
  }
  NiftiHeaderInfo info{};
  std::int32_t hdr = load<std::int32_t>(b, 0, false);
  if (hdr == 348) {
    info.swapped = false;
  } else if (load<std::int32_t>(b, 0, true) == 348) {
    info.swapped = true;
  } else {
    throw NiftiError(K::unsupported_format, "sizeof_hdr", "expected 348 in either byte order, got " + std::to_string(hdr));
  }
  const char* magic = reinterpret_cast<const char*>(b.data() + kMagic);
  if (std::memcmp(magic, "ni1\0", 4) == 0) {
    throw NiftiError(K::unsupported_format, "magic", "detached header/image pairs (ni1) are not supported");
  }
  if (std::memcmp(magic, "n+1\0", 4) != 0) {
    throw NiftiError(K::bad_magic, "magic", "expected \"n+1\\0\"");
  }
  const bool sw = info.swapped;
  info.dim0 = load<std::int16_t>(b, kDim, sw);
  if (info.dim0 != 3 && info.dim0 != 4) {
    throw NiftiError(K::unsupported_format, "dim[0]", "must be 3 or 4, got " + std::to_string(info.dim0));
  }
  std::size_t total = 1;
  for (int i = 1; i <= info.dim0; ++i) {
    std::int16_t d = load<std::int16_t>(b, kDim + 2 * i, sw);
    if (d < 1) {
      throw NiftiError(K::dimension_overflow, "dim[" + std::to_string(i) + "]", "must be >= 1, got " + std::to_string(d));
    }
    info.dims.push_back(static_cast<std::size_t>(d));
    if (total > std::numeric_limits<std::size_t>::max() / 8 / static_cast<std::size_t>(d)) {
      throw NiftiError(K::dimension_overflow, "dim[" + std::to_string(i) + "]", "voxel count overflows");
    }
    total *= static_cast<std::size_t>(d);
  }
  std::int16_t dt = load<std::int16_t>(b, kDatatype, sw);
  if (dt != 2 && dt != 4 && dt != 16 && dt != 64) {
    throw NiftiError(K::unsupported_datatype, "datatype", "code " + std::to_string(dt) + " not in {2, 4, 16, 64}");
  }
  info.datatype = static_cast<NiftiDatatype>(dt);
  for (int i = 0; i < 3; ++i) info.pixdim[i] = load<float>(b, kPixdim + 4 * (i + 1), sw);
  float off = load<float>(b, kVoxOffsetField, sw);
  if (!(off >= static_cast<float>(kVoxOffset))) {
    throw NiftiError(K::unsupported_format, "vox_offset", "must be >= 352 for single-file NIfTI");
  }
  info.vox_offset = static_cast<std::size_t>(off);
  info.scl_slope = load<float>(b, kSclSlope, sw);
  info.scl_inter = load<float>(b, kSclInter, sw);
  const std::size_t need = info.vox_offset + total * datatype_width(info.datatype);
  if (b.size() < need) {
    throw NiftiError(K::truncated, "vox_offset", "file has " + std::to_string(b.size()) + " bytes, voxel data needs " +
                                                      std::to_string(need));
  }
  return info;
}

std::vector<double> load_voxels(const std::vector<std::uint8_t>& b, const NiftiHeaderInfo& info, std::size_t count) {
  std::vector<double> out(count);
  const std::size_t base = info.vox_offset;
  const bool sw = info.swapped;
  for (std::size_t i = 0; i < count; ++i) {
    switch (info.datatype) {
      case NiftiDatatype::uint8: out[i] = b[base + i]; break;
      case NiftiDatatype::int16: out[i] = load<std::int16_t>(b, base + 2 * i, sw); break;
      case NiftiDatatype::float32: out[i] = load<float>(b, base + 4 * i, sw); break;
      case NiftiDatatype::float64: out[i] = load<double>(b, base + 8 * i, sw); break;
    }
  }
  return out;
}

Dims3 spatial(const NiftiHeaderInfo& info) { return Dims3{info.dims[2], info.dims[1], info.dims[0]}; }

std::vector<std::uint8_t> make_header(Dims3 shape, std::size_t t, NiftiDatatype type,
                                      const std::array<double, 3>& spacing, bool four_d) {
  using K = NiftiError::Kind;
  const std::size_t dims[4] = {shape.w, shape.h, shape.d, t};
  const char* names[4] = {"dim[1]", "dim[2]", "dim[3]", "dim[4]"};
  for (int i = 0; i < 4; ++i) {
    if (dims[i] < 1 || dims[i] >= kMaxDim) {
      throw NiftiError(K::dimension_overflow, names[i], std::to_string(dims[i]) + " outside [1, 32767)");
    }
  }
  const std::int16_t dim0 = (four_d || t > 1) ? 4 : 3;
  std::vector<std::uint8_t> b(kVoxOffset, 0);
  store<std::int32_t>(b, 0, 348);
  store<std::int16_t>(b, kDim, dim0);
  for (int i = 0; i < 4; ++i) store<std::int16_t>(b, kDim + 2 * (i + 1), static_cast<std::int16_t>(i < dim0 ? dims[i] : 1));
  for (int i = 5; i < 8; ++i) store<std::int16_t>(b, kDim + 2 * i, 1);
  store<std::int16_t>(b, kDatatype, static_cast<std::int16_t>(type));
  store<std::int16_t>(b, kBitpix, static_cast<std::int16_t>(8 * datatype_width(type)));
  store<float>(b, kPixdim, 1.0f);
  store<float>(b, kPixdim + 4, static_cast<float>(spacing[2]));
  store<float>(b, kPixdim + 8, static_cast<float>(spacing[1]));
  store<float>(b, kPixdim + 12, static_cast<float>(spacing[0]));
  store<float>(b, kVoxOffsetField, static_cast<float>(kVoxOffset));
  store<float>(b, kSclSlope, 1.0f);
  store<float>(b, kSclInter, 0.0f);
  b[kXyztUnits] = 2;  // millimetres
  std::memcpy(b.data() + kMagic, "n+1\0", 4);
  return b;
}

template <class T>
void append(std::vector<std::uint8_t>& b, T v) {
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  b.insert(b.end(), tmp, tmp + sizeof(T));
}

void append_value(std::vector<std::uint8_t>& b, NiftiDatatype type, double v) {
  switch (type) {
    case NiftiDatatype::uint8: b.push_back(static_cast<std::uint8_t>(v)); break;
    case NiftiDatatype::int16: append<std::int16_t>(b, static_cast<std::int16_t>(v)); break;
    case NiftiDatatype::float32: append<float>(b, static_cast<float>(v)); break;
    case NiftiDatatype::float64: append<double>(b, v); break;
  }
}

}  // namespace

Volume decode_nifti1(const std::vector<std::uint8_t>& bytes, NiftiHeaderInfo* out_info) {
  NiftiHeaderInfo info = parse_header(bytes);
  if (out_info) *out_info = info;
  const Dims3 shape = spatial(info);
  const std::size_t t = info.dim0 == 4 ? info.dims[3] : 1;
  std::vector<double> values = load_voxels(bytes, info, shape.voxels() * t);
  std::array<double, 3> spacing{info.pixdim[2], info.pixdim[1], info.pixdim[0]};
  for (auto& s : spacing) {
    if (!(s > 0.0)) s = 1.0;
  }

  if (is_integer(info.datatype)) {
    if (info.dim0 == 4) {
      std::vector<std::vector<std::uint8_t>> grids(t, std::vector<std::uint8_t>(shape.voxels()));
      for (std::size_t r = 0; r < t; ++r) {
        for (std::size_t v = 0; v < shape.voxels(); ++v) {
          double x = values[r * shape.voxels() + v];
          if (x != 0.0 && x != 1.0) {
            throw NiftiError(NiftiError::Kind::unsupported_format, "data",
                             "multi-label grids must be binary, found " + std::to_string(x));
          }
          grids[r][v] = static_cast<std::uint8_t>(x);
        }
      }
      LabelVolume vol = LabelVolume::multi_label(shape, std::move(grids));
      vol.spacing = spacing;
      return vol;
    }
    std::vector<std::int32_t> ids(shape.voxels());
    std::int32_t top = 0;
    for (std::size_t v = 0; v < ids.size(); ++v) {
      if (values[v] < 0) {
        throw NiftiError(NiftiError::Kind::unsupported_format, "data", "negative class id at voxel " + std::to_string(v));
      }
      ids[v] = static_cast<std::int32_t>(values[v]);
      top = std::max(top, ids[v]);
    }
    LabelVolume vol = LabelVolume::exclusive(shape, static_cast<std::size_t>(top), std::move(ids));
    vol.spacing = spacing;
    return vol;
  }

  ImageVolume img;
  img.shape = shape;
  img.modalities = t;
  img.spacing = spacing;
  if (info.scl_slope != 0.0 && (info.scl_slope != 1.0 || info.scl_inter != 0.0)) {
    for (auto& x : values) x = x * info.scl_slope + info.scl_inter;
  }
  img.data = std::move(values);
  return img;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NiftiError(NiftiError::Kind::io, "path", "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NiftiError(NiftiError::Kind::io, "path", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw NiftiError(NiftiError::Kind::io, "path", "short write to " + path.string());
}

Volume read_nifti1(const std::filesystem::path& path) { return decode_nifti1(read_file_bytes(path)); }

ImageVolume read_image(const std::filesystem::path& path) {
  Volume v = read_nifti1(path);
  if (auto* img = std::get_if<ImageVolume>(&v)) return std::move(*img);
  // Integer-typed images are accepted and converted.
  const auto& lab = std::get<LabelVolume>(v);
  ImageVolume img;
  img.shape = lab.shape;
  img.spacing = lab.spacing;
  if (lab.mode == LabelMode::exclusive) {
    img.data.assign(lab.ids.begin(), lab.ids.end());
  } else {
    img.modalities = lab.grids.size();
    for (const auto& g : lab.grids) img.data.insert(img.data.end(), g.begin(), g.end());
  }
  return img;
}

LabelVolume read_labels(const std::filesystem::path& path, std::size_t num_foreground) {
  Volume v = read_nifti1(path);
  auto* lab = std::get_if<LabelVolume>(&v);
  if (!lab) {
    throw NiftiError(NiftiError::Kind::unsupported_datatype, "datatype",
                     path.string() + " holds floating-point data, expected integer labels");
  }
  if (lab->mode == LabelMode::exclusive && num_foreground > 0) {
    if (num_foreground < lab->num_foreground) {
      throw NiftiError(NiftiError::Kind::unsupported_format, "data",
                       "class id " + std::to_string(lab->num_foreground) + " exceeds declared class count");
    }
    lab->num_foreground = num_foreground;
  }
  return std::move(*lab);
}

std::vector<std::uint8_t> encode_nifti1(const ImageVolume& vol, NiftiDatatype type) {
  vol.validate();
  if (is_integer(type)) {
    throw NiftiError(NiftiError::Kind::unsupported_datatype, "datatype", "images are written as float32 or float64");
  }
  auto b = make_header(vol.shape, vol.modalities, type, vol.spacing, false);
  b.reserve(b.size() + vol.data.size() * datatype_width(type));
  for (double v : vol.data) append_value(b, type, v);
  return b;
}

std::vector<std::uint8_t> encode_nifti1(const LabelVolume& vol, NiftiDatatype type) {
  vol.validate();
  if (!is_integer(type)) {
    throw NiftiError(NiftiError::Kind::unsupported_datatype, "datatype", "labels are written as uint8 or int16");
  }
  const double limit = type == NiftiDatatype::uint8 ? 255.0 : 32767.0;
  const std::size_t t = vol.mode == LabelMode::exclusive ? 1 : vol.grids.size();
  auto b = make_header(vol.shape, t, type, vol.spacing, vol.mode == LabelMode::multi_label);
  if (vol.mode == LabelMode::exclusive) {
    for (auto id : vol.ids) {
      if (id > limit) {
        throw NiftiError(NiftiError::Kind::unsupported_datatype, "datatype",
                         "class id " + std::to_string(id) + " does not fit the label datatype");
      }
      append_value(b, type, id);
    }
  } else {
    for (const auto& g : vol.grids)
      for (auto v : g) append_value(b, type, v);
  }
  return b;
}

void write_nifti1(const ImageVolume& vol, const std::filesystem::path& path, NiftiDatatype type) {
  write_file_bytes(path, encode_nifti1(vol, type));
}

void write_nifti1(const LabelVolume& vol, const std::filesystem::path& path, NiftiDatatype type) {
  write_file_bytes(path, encode_nifti1(vol, type));
}

std::vector<std::uint8_t> to_big_endian(const std::vector<std::uint8_t>& little) {
  NiftiHeaderInfo info = parse_header(little);
  if (info.swapped) throw InvalidArgumentError("to_big_endian expects a little-endian NIfTI image");
  std::vector<std::uint8_t> b = little;
  for (const auto& f : kNumericFields)
    for (std::size_t i = 0; i < f.count; ++i) swap_bytes(b.data() + f.offset + i * f.width, f.width);
  const std::size_t width = datatype_width(info.datatype);
  if (width > 1) {
    for (std::size_t p = info.vox_offset; p + width <= b.size(); p += width) swap_bytes(b.data() + p, width);
  }
  return b;
}

}  // namespace recokd::io
