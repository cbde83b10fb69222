#pragma once

#include "sen4x/tensor.hpp"

namespace sen4x {

/// Bilinear resampling of a C×H×W image with pixel-center alignment: output
/// pixel i samples source coordinate (i + 0.5)·(H / out_h) − 0.5, clamped
/// to the image. No antialiasing filter is applied.
Tensor<float> resize_bilinear(const Tensor<float>& image, int out_h, int out_w);

/// Bicubic (Keys, a = −0.75) resampling with the same alignment; results are
/// clamped to [0, 1].
Tensor<float> resize_bicubic(const Tensor<float>& image, int out_h, int out_w);

/// Mean over non-overlapping factor×factor blocks.
Tensor<float> box_downsample(const Tensor<float>& image, int factor);

/// Separable Gaussian blur with periodic boundary; kernel radius ceil(3σ).
Tensor<float> gaussian_blur_periodic(const Tensor<float>& image, double sigma);

}  // namespace sen4x
