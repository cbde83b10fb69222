#pragma once

// S4XR raster container:
//   bytes 0-3  ASCII "S4XR"
//   byte  4    version (0x01)
//   byte  5    dtype (0x00 = little-endian float32, 0x01 = uint8)
//   byte  6    ndim
//   byte  7    reserved, zero
//   ndim × uint32 little-endian dims, then the row-major payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "sen4x/tensor.hpp"

namespace sen4x {

enum class DType : std::uint8_t { kF32 = 0x00, kU8 = 0x01 };

struct RasterTensor {
  Shape dims;
  std::variant<std::vector<float>, std::vector<std::uint8_t>> payload;

  static RasterTensor from(const Tensor<float>& t) { return {t.shape, t.data}; }
  static RasterTensor from_u8(Shape dims, std::vector<std::uint8_t> values) { return {std::move(dims), std::move(values)}; }

  DType dtype() const { return payload.index() == 0 ? DType::kF32 : DType::kU8; }
  /// Throws kDtypeMismatch when the payload is not float32.
  Tensor<float> as_f32() const;
  /// Throws kDtypeMismatch when the payload is not uint8.
  const std::vector<std::uint8_t>& as_u8() const;
};

std::vector<std::uint8_t> encode_raster(const RasterTensor& r);
RasterTensor decode_raster(const std::vector<std::uint8_t>& bytes);

void write_raster(const RasterTensor& r, const std::filesystem::path& path);
RasterTensor read_raster(const std::filesystem::path& path);

// convenience wrappers
void write_f32(const Tensor<float>& t, const std::filesystem::path& path);
Tensor<float> read_f32(const std::filesystem::path& path);
void write_u8(const Shape& dims, const std::vector<std::uint8_t>& values, const std::filesystem::path& path);
std::vector<std::uint8_t> read_u8(const std::filesystem::path& path, Shape* dims = nullptr);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace sen4x
