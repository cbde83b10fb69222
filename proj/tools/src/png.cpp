#include "sen4x_cli/png.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "sen4x/error.hpp"

namespace sen4x::cli {

void write_png(const Tensor<float>& image, const std::filesystem::path& path) {
  if (image.ndim() != 3) fail(ErrorCode::kShapeMismatch, "png: expected C×H×W, got " + shape_str(image.shape));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int channels = c >= 3 ? 3 : 1;
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::kIo, "png: out of memory");
  }
  std::vector<png_byte> rows(static_cast<std::size_t>(h) * w * channels);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (int b = 0; b < channels; ++b) {
      const float v = std::clamp(image.data[b * plane + i], 0.0f, 1.0f);
      rows[i * channels + b] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; ++y) ptrs[y] = rows.data() + static_cast<std::size_t>(y) * w * channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "png: encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace sen4x::cli
