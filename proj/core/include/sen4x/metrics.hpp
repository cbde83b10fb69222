#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sen4x/tensor.hpp"

namespace sen4x::metrics {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr int kDefaultClasses = 7;
inline constexpr std::uint8_t kIgnore = 255;

/// 10·log10(peak² / MSE); +inf when the inputs are identical.
double psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0);
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
  bool luminance = true;  // false → contrast-structure term only
};

/// Mean SSIM over all fully-contained Gaussian windows of one band.
double ssim_band(const float* a, const float* b, int height, int width, const SsimParams& p = {});
/// H×W or C×H×W; multi-band inputs average the per-band SSIM.
double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimParams& p = {});

/// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  int k = kDefaultClasses;
  std::vector<std::uint64_t> counts;  // k×k row-major
  std::uint64_t ignored = 0;

  explicit ConfusionMatrix(int classes = kDefaultClasses)
      : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}
  std::uint64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * k + pred]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                          int k = kDefaultClasses);

struct SegScores {
  double overall_acc = 0;
  double macro_miou = 0;
  double micro_miou = 0;
  std::vector<double> iou;                     // 0 for classes with empty union
  std::vector<std::optional<double>> recall;   // nullopt for classes absent from ground truth
};

/// Absent classes keep IoU 0 inside the K-term macro mean.
SegScores seg_scores(const ConfusionMatrix& cm);

struct EvalReport {
  std::optional<double> psnr_db, ssim, acc, miou_macro, miou_micro;
  std::vector<std::optional<double>> recall;
};

EvalReport report_from(const SegScores& s);
/// Infinite values are written as the string "inf"; missing values as null.
std::string report_json(const EvalReport& r);

}  // namespace sen4x::metrics
