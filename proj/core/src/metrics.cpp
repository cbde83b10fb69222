#include "sen4x/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "sen4x/error.hpp"

namespace sen4x::metrics {

double psnr(std::span<const float> a, std::span<const float> b, double peak) {
  if (a.size() != b.size())
    fail(ErrorCode::kShapeMismatch,
         "psnr: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " elements");
  if (a.empty()) fail(ErrorCode::kShapeMismatch, "psnr: empty input");
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.size());
  if (mse == 0) return kInf;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak) {
  if (a.shape != b.shape) fail(ErrorCode::kShapeMismatch, "psnr: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  return psnr(a.span(), b.span(), peak);
}

namespace {

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) sum += g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (double& v : g) v /= sum;
  return g;
}

// valid-mode separable filter of an h×w field → (h−n+1)×(w−n+1)
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
  const int n = static_cast<int>(g.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim_band(const float* a, const float* b, int height, int width, const SsimParams& p) {
  if (height < p.window || width < p.window)
    fail(ErrorCode::kShapeMismatch, "ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                                        " smaller than the " + std::to_string(p.window) + "-pixel window");
  const std::size_t n = static_cast<std::size_t>(height) * width;
  std::vector<double> va(n), vb(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    va[i] = a[i];
    vb[i] = b[i];
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto g = gaussian_taps(p.window, p.sigma);
  const auto mu_a = filter_valid(va, height, width, g);
  const auto mu_b = filter_valid(vb, height, width, g);
  const auto e_aa = filter_valid(aa, height, width, g);
  const auto e_bb = filter_valid(bb, height, width, g);
  const auto e_ab = filter_valid(ab, height, width, g);
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double sum = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma, var_b = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    const double cs = (2 * cov + c2) / (var_a + var_b + c2);
    sum += p.luminance ? cs * (2 * ma * mb + c1) / (ma * ma + mb * mb + c1) : cs;
  }
  return sum / static_cast<double>(mu_a.size());
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimParams& p) {
  if (a.shape != b.shape) fail(ErrorCode::kShapeMismatch, "ssim: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.ndim() == 2) return ssim_band(a.ptr(), b.ptr(), a.dim(0), a.dim(1), p);
  if (a.ndim() != 3) fail(ErrorCode::kShapeMismatch, "ssim: expected H×W or C×H×W, got " + shape_str(a.shape));
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double sum = 0;
  for (int i = 0; i < c; ++i) sum += ssim_band(a.ptr() + i * plane, b.ptr() + i * plane, h, w, p);
  return sum / c;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k != k) fail(ErrorCode::kShapeMismatch, "confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  ignored += other.ignored;
  return *this;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int k) {
  if (pred.size() != gt.size())
    fail(ErrorCode::kShapeMismatch,
         "confusion: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) + " labels");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnore) {
      ++cm.ignored;
      continue;
    }
    if (gt[i] >= k || pred[i] >= k)
      fail(ErrorCode::kData, "confusion: class code " + std::to_string(gt[i] >= k ? gt[i] : pred[i]) +
                                 " out of range at pixel " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(gt[i]) * k + pred[i]];
  }
  return cm;
}

SegScores seg_scores(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) fail(ErrorCode::kData, "seg_scores: confusion matrix is empty");
  const int k = cm.k;
  SegScores s;
  s.iou.assign(k, 0.0);
  s.recall.assign(k, std::nullopt);
  std::uint64_t tp_sum = 0, union_sum = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t uni = row + col - tp;  // TP + FN + FP
    if (uni > 0) s.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    if (row > 0) s.recall[c] = static_cast<double>(tp) / static_cast<double>(row);
    tp_sum += tp;
    union_sum += uni;
    s.macro_miou += s.iou[c];
  }
  s.macro_miou /= k;
  s.overall_acc = static_cast<double>(tp_sum) / static_cast<double>(total);
  s.micro_miou = static_cast<double>(tp_sum) / static_cast<double>(union_sum);
  return s;
}

EvalReport report_from(const SegScores& s) {
  EvalReport r;
  r.acc = s.overall_acc;
  r.miou_macro = s.macro_miou;
  r.miou_micro = s.micro_miou;
  r.recall = s.recall;
  return r;
}

namespace {

nlohmann::json number(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  if (std::isnan(*v)) return "nan";
  return *v;
}

}  // namespace

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["psnr_db"] = number(r.psnr_db);
  j["ssim"] = number(r.ssim);
  j["acc"] = number(r.acc);
  j["miou_macro"] = number(r.miou_macro);
  j["miou_micro"] = number(r.miou_micro);
  if (r.recall.empty()) {
    j["recall"] = nullptr;
  } else {
    j["recall"] = nlohmann::json::array();
    for (const auto& v : r.recall) j["recall"].push_back(number(v));
  }
  return j.dump(2) + "\n";
}

}  // namespace sen4x::metrics
