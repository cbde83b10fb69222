#pragma once

#include <filesystem>

#include "sen4x/tensor.hpp"

namespace sen4x::cli {

/// 8-bit PNG of bands 0-2 (RGB) of a C×H×W image in [0, 1]; one band is
/// written as grey. Values are clamped.
void write_png(const Tensor<float>& image, const std::filesystem::path& path);

}  // namespace sen4x::cli
