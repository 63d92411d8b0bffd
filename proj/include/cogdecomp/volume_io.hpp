#pragma once

// NIfTI-1 volume decoding and axial slicing.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cogdecomp/error.hpp"
#include "cogdecomp/grid.hpp"

namespace cogdecomp {

/// 3-D scalar grid in NIfTI column-major order (x fastest).
struct Volume {
  std::string subject_id;
  std::array<std::size_t, 3> dims{};  // nx, ny, nz
  std::vector<double> voxels;
  int datatype_code = 0;

  std::size_t nx() const noexcept { return dims[0]; }
  std::size_t ny() const noexcept { return dims[1]; }
  std::size_t nz() const noexcept { return dims[2]; }

  std::size_t linear_index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims[0] * (y + dims[1] * z);
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels[linear_index(x, y, z)];
  }
};

/// Axial slice; pixel (r, c) is voxel (x = r, y = c) of the parent volume.
struct Slice2D {
  std::string subject_id;
  std::size_t slice_index = 0;
  Grid<double> pixels;
};

struct QuantizedSlice {
  int levels = 0;
  Grid<int> indices;
};

namespace nifti {

inline constexpr std::size_t kHeaderSize = 348;

enum Datatype : int {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

inline int bytes_per_voxel(int datatype) {
  switch (datatype) {
    case kUInt8: return 1;
    case kInt16: return 2;
    case kInt32: return 4;
    case kFloat32: return 4;
    case kFloat64: return 8;
    default:
      throw Error(Errc::UnsupportedDatatype, "datatype code " + std::to_string(datatype));
  }
}

namespace detail {

// Reads a whole file, inflating it if it starts with the gzip magic.
// zlib's gzread passes non-gzip content through unchanged.
inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw Error(Errc::IoError, "cannot open " + path.string());
  gzFile file = gzopen(path.c_str(), "rb");
  if (!file) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes;
  std::array<unsigned char, 1 << 16> buffer;
  for (;;) {
    const int n = gzread(file, buffer.data(), static_cast<unsigned>(buffer.size()));
    if (n < 0) {
      int errnum = 0;
      std::string msg = gzerror(file, &errnum);
      gzclose(file);
      throw Error(Errc::IoError, "read failure in " + path.string() + ": " + msg);
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), buffer.begin(), buffer.begin() + n);
  }
  gzclose(file);
  return bytes;
}

template <class T>
T load(const unsigned char* p, bool swap) {
  std::array<unsigned char, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  return std::bit_cast<T>(raw);
}

template <class T>
void store_le(unsigned char* p, T value) {
  auto raw = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  std::memcpy(p, raw.data(), sizeof(T));
}

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

struct Header {
  bool swapped = false;
  std::array<std::int16_t, 8> dim{};
  int datatype = 0;
  int bitpix = 0;
  double vox_offset = 0.0;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  bool single_file = true;  // "n+1" vs "ni1"
};

inline Header parse_header(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kHeaderSize)
    throw Error(Errc::MalformedHeader, "file shorter than the 348-byte header");
  Header h;
  const auto* p = bytes.data();
  if (detail::load<std::int32_t>(p, false) == 348) {
    h.swapped = false;
  } else if (detail::load<std::int32_t>(p, true) == 348) {
    h.swapped = true;
  } else {
    throw Error(Errc::MalformedHeader, "sizeof_hdr is not 348 in either byte order");
  }
  if (std::memcmp(p + 344, "n+1\0", 4) == 0) {
    h.single_file = true;
  } else if (std::memcmp(p + 344, "ni1\0", 4) == 0) {
    h.single_file = false;
  } else {
    throw Error(Errc::MalformedHeader, "bad magic");
  }
  for (int i = 0; i < 8; ++i) h.dim[i] = detail::load<std::int16_t>(p + 40 + 2 * i, h.swapped);
  h.datatype = detail::load<std::int16_t>(p + 70, h.swapped);
  h.bitpix = detail::load<std::int16_t>(p + 72, h.swapped);
  h.vox_offset = detail::load<float>(p + 108, h.swapped);
  h.scl_slope = detail::load<float>(p + 112, h.swapped);
  h.scl_inter = detail::load<float>(p + 116, h.swapped);

  if (h.dim[0] < 3 || h.dim[0] > 7)
    throw Error(Errc::DimensionError, "dim[0] = " + std::to_string(h.dim[0]) + ", need 3..7");
  for (int i = 1; i <= 3; ++i)
    if (h.dim[i] < 1)
      throw Error(Errc::DimensionError, "dim[" + std::to_string(i) + "] < 1");
  for (int i = 4; i <= h.dim[0]; ++i)
    if (h.dim[i] != 1)
      throw Error(Errc::DimensionError,
                  "trailing dim[" + std::to_string(i) + "] = " + std::to_string(h.dim[i]));
  const int bpv = bytes_per_voxel(h.datatype);  // throws UnsupportedDatatype
  if (h.bitpix != 0 && h.bitpix != 8 * bpv)
    throw Error(Errc::MalformedHeader, "bitpix disagrees with datatype");
  if (!std::isfinite(h.vox_offset) || h.vox_offset < 0)
    throw Error(Errc::MalformedHeader, "invalid vox_offset");
  return h;
}

inline std::vector<double> decode_voxels(const unsigned char* data, std::size_t count,
                                         const Header& h) {
  std::vector<double> out(count);
  const int bpv = bytes_per_voxel(h.datatype);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = data + i * bpv;
    switch (h.datatype) {
      case kUInt8: out[i] = p[0]; break;
      case kInt16: out[i] = detail::load<std::int16_t>(p, h.swapped); break;
      case kInt32: out[i] = detail::load<std::int32_t>(p, h.swapped); break;
      case kFloat32: out[i] = detail::load<float>(p, h.swapped); break;
      case kFloat64: out[i] = detail::load<double>(p, h.swapped); break;
    }
  }
  // scl_slope == 0 (or non-finite) means "no scaling".
  if (h.scl_slope != 0.0 && std::isfinite(h.scl_slope)) {
    const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    for (auto& v : out) v = h.scl_slope * v + inter;
  }
  for (std::size_t i = 0; i < count; ++i)
    if (!std::isfinite(out[i]))
      throw Error(Errc::InvalidData, "non-finite voxel at linear index " + std::to_string(i));
  return out;
}

}  // namespace nifti

/// Decodes a NIfTI-1 file (.nii, .nii.gz, or .hdr/.img pair). `subject_id`
/// defaults to the file name without NIfTI extensions.
inline Volume read_nifti(const std::filesystem::path& path, std::string subject_id = {}) {
  using namespace nifti;
  const auto bytes = nifti::detail::read_file_bytes(path);
  const Header h = parse_header(bytes);

  Volume v;
  v.dims = {static_cast<std::size_t>(h.dim[1]), static_cast<std::size_t>(h.dim[2]),
            static_cast<std::size_t>(h.dim[3])};
  v.datatype_code = h.datatype;
  const std::size_t count = v.dims[0] * v.dims[1] * v.dims[2];
  const std::size_t payload = count * static_cast<std::size_t>(bytes_per_voxel(h.datatype));

  if (h.single_file) {
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    if (offset < kHeaderSize || bytes.size() < offset + payload)
      throw Error(Errc::MalformedHeader, "voxel payload truncated in " + path.string());
    v.voxels = decode_voxels(bytes.data() + offset, count, h);
  } else {
    // Two-file form: header in .hdr, voxels in the matching .img.
    std::string img = path.string();
    bool gz = nifti::detail::ends_with(img, ".gz");
    if (gz) img.resize(img.size() - 3);
    if (!nifti::detail::ends_with(img, ".hdr"))
      throw Error(Errc::MalformedHeader, "'ni1' header not in a .hdr file: " + path.string());
    img.replace(img.size() - 4, 4, ".img");
    if (gz && std::filesystem::exists(img + ".gz")) img += ".gz";
    const auto data = nifti::detail::read_file_bytes(img);
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    if (data.size() < offset + payload)
      throw Error(Errc::MalformedHeader, "voxel payload truncated in " + img);
    v.voxels = decode_voxels(data.data() + offset, count, h);
  }

  if (subject_id.empty()) {
    subject_id = path.filename().string();
    for (std::string_view ext : {".gz", ".nii", ".hdr"})
      if (nifti::detail::ends_with(subject_id, ext)) subject_id.resize(subject_id.size() - ext.size());
  }
  v.subject_id = std::move(subject_id);
  return v;
}

/// Minimal single-file NIfTI-1 writer (little-endian, identity scaling) for
/// generated test data. A ".gz" suffix selects gzip compression.
inline void write_nifti(const std::filesystem::path& path, const Volume& v,
                        int datatype = nifti::kFloat32) {
  using namespace nifti;
  const int bpv = bytes_per_voxel(datatype);
  if (v.voxels.size() != v.dims[0] * v.dims[1] * v.dims[2])
    throw Error(Errc::DimensionError, "voxel count does not match dims");
  for (auto d : v.dims)
    if (d < 1 || d > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw Error(Errc::DimensionError, "dimension out of NIfTI-1 range");

  std::vector<unsigned char> bytes(352 + v.voxels.size() * bpv, 0);
  auto* p = bytes.data();
  nifti::detail::store_le<std::int32_t>(p, 348);
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(v.dims[0]),
                                        static_cast<std::int16_t>(v.dims[1]),
                                        static_cast<std::int16_t>(v.dims[2]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) nifti::detail::store_le<std::int16_t>(p + 40 + 2 * i, dim[i]);
  nifti::detail::store_le<std::int16_t>(p + 70, static_cast<std::int16_t>(datatype));
  nifti::detail::store_le<std::int16_t>(p + 72, static_cast<std::int16_t>(8 * bpv));
  for (int i = 0; i < 8; ++i) nifti::detail::store_le<float>(p + 76 + 4 * i, 1.0f);
  nifti::detail::store_le<float>(p + 108, 352.0f);
  std::memcpy(p + 344, "n+1\0", 4);

  auto* out = p + 352;
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    const double x = v.voxels[i];
    auto check_range = [&](double lo, double hi) {
      if (!(x >= lo && x <= hi) || x != std::round(x))
        throw Error(Errc::InvalidData, "voxel not representable in datatype " +
                                           std::to_string(datatype));
    };
    switch (datatype) {
      case kUInt8: check_range(0, 255); out[i] = static_cast<unsigned char>(x); break;
      case kInt16:
        check_range(INT16_MIN, INT16_MAX);
        nifti::detail::store_le<std::int16_t>(out + 2 * i, static_cast<std::int16_t>(x));
        break;
      case kInt32:
        check_range(INT32_MIN, INT32_MAX);
        nifti::detail::store_le<std::int32_t>(out + 4 * i, static_cast<std::int32_t>(x));
        break;
      case kFloat32: nifti::detail::store_le<float>(out + 4 * i, static_cast<float>(x)); break;
      case kFloat64: nifti::detail::store_le<double>(out + 8 * i, x); break;
    }
  }

  const std::string name = path.string();
  if (nifti::detail::ends_with(name, ".gz")) {
    gzFile file = gzopen(name.c_str(), "wb9");
    if (!file) throw Error(Errc::IoError, "cannot create " + name);
    const int written = gzwrite(file, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(file) != Z_OK || written != static_cast<int>(bytes.size()))
      throw Error(Errc::IoError, "write failure in " + name);
  } else {
    std::FILE* f = std::fopen(name.c_str(), "wb");
    if (!f) throw Error(Errc::IoError, "cannot create " + name);
    const auto n = std::fwrite(bytes.data(), 1, bytes.size(), f);
    if (std::fclose(f) != 0 || n != bytes.size()) throw Error(Errc::IoError, "write failure in " + name);
  }
}

/// One slice per third-axis index, in ascending order.
inline std::vector<Slice2D> extract_axial_slices(const Volume& v) {
  std::vector<Slice2D> slices;
  slices.reserve(v.nz());
  for (std::size_t z = 0; z < v.nz(); ++z) {
    Slice2D s{v.subject_id, z, Grid<double>(v.nx(), v.ny())};
    for (std::size_t y = 0; y < v.ny(); ++y)
      for (std::size_t x = 0; x < v.nx(); ++x) s.pixels(x, y) = v.at(x, y, z);
    slices.push_back(std::move(s));
  }
  return slices;
}

/// Min-max quantization to `levels` grey levels. A constant slice maps to 0.
inline QuantizedSlice quantize(const Grid<double>& pixels, int levels) {
  if (levels < 2) throw Error(Errc::InvalidLevels, "levels = " + std::to_string(levels));
  QuantizedSlice q{levels, Grid<int>(pixels.rows(), pixels.cols(), 0)};
  if (pixels.empty()) return q;
  const auto [lo_it, hi_it] = std::minmax_element(pixels.values().begin(), pixels.values().end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (range <= 0.0) return q;
  auto& out = q.indices.values();
  const auto& in = pixels.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double scaled = std::floor((in[i] - lo) / range * levels);
    out[i] = static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(levels - 1)));
  }
  return q;
}

inline QuantizedSlice quantize(const Slice2D& s, int levels) { return quantize(s.pixels, levels); }

}  // namespace cogdecomp
