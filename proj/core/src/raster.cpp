#include "sen4x/raster.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sen4x/error.hpp"

namespace sen4x {
namespace {

constexpr char kMagic[4] = {'S', '4', 'X', 'R'};
constexpr std::uint8_t kVersion = 0x01;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

Tensor<float> RasterTensor::as_f32() const {
  if (dtype() != DType::kF32) fail(ErrorCode::kDtypeMismatch, "raster holds uint8, float32 requested");
  return Tensor<float>(dims, std::get<0>(payload));
}

const std::vector<std::uint8_t>& RasterTensor::as_u8() const {
  if (dtype() != DType::kU8) fail(ErrorCode::kDtypeMismatch, "raster holds float32, uint8 requested");
  return std::get<1>(payload);
}

std::vector<std::uint8_t> encode_raster(const RasterTensor& r) {
  const std::size_t n = shape_numel(r.dims);
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(r.dtype()));
  out.push_back(static_cast<std::uint8_t>(r.dims.size()));
  out.push_back(0);
  for (int d : r.dims) put_u32(out, static_cast<std::uint32_t>(d));
  if (r.dtype() == DType::kF32) {
    const auto& v = std::get<0>(r.payload);
    if (v.size() != n) fail(ErrorCode::kShapeMismatch, "raster payload does not match dims");
    for (float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
  } else {
    const auto& v = std::get<1>(r.payload);
    if (v.size() != n) fail(ErrorCode::kShapeMismatch, "raster payload does not match dims");
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

RasterTensor decode_raster(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::kBadMagic, "not an S4XR raster");
  if (bytes[4] != kVersion) fail(ErrorCode::kBadVersion, "unsupported S4XR version " + std::to_string(bytes[4]));
  const std::uint8_t dtype = bytes[5];
  if (dtype != 0x00 && dtype != 0x01) fail(ErrorCode::kDtypeMismatch, "unknown S4XR dtype " + std::to_string(dtype));
  const std::size_t ndim = bytes[6];
  const std::size_t header = 8 + 4 * ndim;
  if (bytes.size() < header) fail(ErrorCode::kTruncated, "S4XR header truncated");
  RasterTensor r;
  for (std::size_t i = 0; i < ndim; ++i) r.dims.push_back(static_cast<int>(get_u32(bytes.data() + 8 + 4 * i)));
  const std::size_t n = shape_numel(r.dims);
  const std::size_t elem = dtype == 0x00 ? 4 : 1;
  if (bytes.size() - header != n * elem)
    fail(ErrorCode::kTruncated, "S4XR payload has " + std::to_string(bytes.size() - header) + " bytes, dims " +
                                    shape_str(r.dims) + " require " + std::to_string(n * elem));
  const std::uint8_t* p = bytes.data() + header;
  if (dtype == 0x00) {
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    r.payload = std::move(v);
  } else {
    r.payload = std::vector<std::uint8_t>(p, p + n);
  }
  return r;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

void write_raster(const RasterTensor& r, const std::filesystem::path& path) {
  write_file_bytes(path, encode_raster(r));
}

RasterTensor read_raster(const std::filesystem::path& path) { return decode_raster(read_file_bytes(path)); }

void write_f32(const Tensor<float>& t, const std::filesystem::path& path) { write_raster(RasterTensor::from(t), path); }

Tensor<float> read_f32(const std::filesystem::path& path) { return read_raster(path).as_f32(); }

void write_u8(const Shape& dims, const std::vector<std::uint8_t>& values, const std::filesystem::path& path) {
  write_raster(RasterTensor::from_u8(dims, values), path);
}

std::vector<std::uint8_t> read_u8(const std::filesystem::path& path, Shape* dims) {
  RasterTensor r = read_raster(path);
  if (dims) *dims = r.dims;
  return r.as_u8();
}

}  // namespace sen4x
