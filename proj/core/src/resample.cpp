#include "sen4x/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sen4x/error.hpp"

namespace sen4x {
namespace {

struct Tap2 {
  int i0, i1;
  double w1;
};

std::vector<Tap2> linear_taps(int in, int out) {
  std::vector<Tap2> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - i0};
  }
  return taps;
}

double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

}  // namespace

Tensor<float> resize_bilinear(const Tensor<float>& image, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) fail(ErrorCode::kShapeMismatch, "resize_bilinear: zero output dims");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto ty = linear_taps(h, out_h);
  const auto tx = linear_taps(w, out_w);
  Tensor<float> out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (int x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double top = (1 - b.w1) * image.at(ch, a.i0, b.i0) + b.w1 * image.at(ch, a.i0, b.i1);
        const double bot = (1 - b.w1) * image.at(ch, a.i1, b.i0) + b.w1 * image.at(ch, a.i1, b.i1);
        out.at(ch, y, x) = static_cast<float>((1 - a.w1) * top + a.w1 * bot);
      }
    }
  return out;
}

Tensor<float> resize_bicubic(const Tensor<float>& image, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) fail(ErrorCode::kShapeMismatch, "resize_bicubic: zero output dims");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto taps = [](int in, int out, int i, int* idx, double* wt) {
    const double src = (i + 0.5) * static_cast<double>(in) / out - 0.5;
    const int f = static_cast<int>(std::floor(src));
    const double t = src - f;
    for (int k = 0; k < 4; ++k) {
      idx[k] = std::clamp(f - 1 + k, 0, in - 1);
      wt[k] = cubic_weight(t - (k - 1));
    }
  };
  Tensor<float> out({c, out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    int iy[4];
    double wy[4];
    taps(h, out_h, y, iy, wy);
    for (int x = 0; x < out_w; ++x) {
      int ix[4];
      double wx[4];
      taps(w, out_w, x, ix, wx);
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) acc += wy[a] * wx[b] * image.at(ch, iy[a], ix[b]);
        out.at(ch, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

Tensor<float> box_downsample(const Tensor<float>& image, int factor) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (factor <= 0 || h % factor || w % factor)
    fail(ErrorCode::kShapeMismatch, "box_downsample: dims not divisible by factor");
  const int oh = h / factor, ow = w / factor;
  Tensor<float> out({c, oh, ow});
  const double norm = 1.0 / (factor * factor);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += image.at(ch, y * factor + dy, x * factor + dx);
        out.at(ch, y, x) = static_cast<float>(acc * norm);
      }
  return out;
}

Tensor<float> gaussian_blur_periodic(const Tensor<float>& image, double sigma) {
  if (sigma <= 0) return image;
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
  Tensor<float> tmp({c, h, w}), out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * image.at(ch, y, wrap(x + i, w));
        tmp.at(ch, y, x) = static_cast<float>(acc);
      }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(ch, wrap(y + i, h), x);
        out.at(ch, y, x) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace sen4x
