#include "sen4x/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sen4x/error.hpp"
#include "sen4x/resample.hpp"

namespace sen4x::datapipe {

const char* class_name(int code) {
  static constexpr const char* kNames[kNumClasses] = {"buildings", "sealed",   "water",    "forest",
                                                      "grassland", "cropland", "bare_soil"};
  if (code >= 0 && code < kNumClasses) return kNames[code];
  return code == kIgnoreLabel ? "ignore" : "invalid";
}

// days_from_civil / civil_from_days (H. Hinnant)
long long CalendarDate::days_since_epoch() const {
  const long long y = year - (month <= 2);
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned mp = static_cast<unsigned>(month + (month > 2 ? -3 : 9));
  const unsigned doy = (153 * mp + 2) / 5 + day - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

CalendarDate CalendarDate::from_days(long long z) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long long y = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

CalendarDate CalendarDate::parse(const std::string& text) {
  CalendarDate d;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%d-%d-%d%c", &d.year, &d.month, &d.day, &tail) != 3 || d.month < 1 || d.month > 12 ||
      d.day < 1 || d.day > 31 || from_days(d.days_since_epoch()) != d)
    fail(ErrorCode::kData, "invalid date '" + text + "', expected YYYY-MM-DD");
  return d;
}

std::string CalendarDate::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  return buf;
}

RevisitScore score_revisit(const RevisitCandidate& c) {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(c.cloud_fraction) || !in_unit(c.invalid_fraction) || !in_unit(c.high_reflectance_fraction))
    fail(ErrorCode::kData, "revisit " + c.id + ": fractions must lie in [0, 1]");
  const long long dist = days_between(c.acq_date, c.ref_date);
  if (dist > kMaxDateDistanceDays)
    fail(ErrorCode::kData, "revisit " + c.id + " acquired " + std::to_string(dist) +
                               " days from the reference date (limit 730)");
  RevisitScore s;
  s.temporal = std::clamp(1.0 - static_cast<double>(dist) / kMaxDateDistanceDays, 0.0, 1.0);
  s.completeness = 1.0 - std::max(c.cloud_fraction, c.invalid_fraction);
  s.spectral = 1.0 - c.high_reflectance_fraction;
  return s;
}

bool ranks_before(const RankedRevisit& a, const RankedRevisit& b) {
  if (a.weighted != b.weighted) return a.weighted > b.weighted;
  if (a.date_distance != b.date_distance) return a.date_distance < b.date_distance;
  return a.id < b.id;
}

std::vector<RankedRevisit> rank_revisits(const std::vector<RevisitCandidate>& candidates, const ScoreWeights& w) {
  std::vector<RankedRevisit> ranked;
  for (const auto& c : candidates) {
    if (days_between(c.acq_date, c.ref_date) > kMaxDateDistanceDays) continue;
    RankedRevisit r;
    r.id = c.id;
    r.score = score_revisit(c);
    r.weighted = w.combine(r.score);
    r.date_distance = days_between(c.acq_date, c.ref_date);
    ranked.push_back(std::move(r));
  }
  std::sort(ranked.begin(), ranked.end(), ranks_before);
  return ranked;
}

std::vector<RankedRevisit> select_revisits(const std::vector<RevisitCandidate>& candidates, int k,
                                           const std::string& tile_id, const ScoreWeights& w) {
  auto ranked = rank_revisits(candidates, w);
  if (static_cast<int>(ranked.size()) < k)
    fail(ErrorCode::kData, "tile " + tile_id + ": only " + std::to_string(ranked.size()) +
                               " usable revisits, " + std::to_string(k) + " required");
  ranked.resize(k);
  return ranked;
}

double percentile_sorted(std::span<const float> sorted, double pct) {
  if (sorted.empty()) fail(ErrorCode::kData, "percentile of an empty set");
  const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = rank - static_cast<double>(lo);
  return sorted[lo] + t * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

namespace {

std::pair<double, double> valid_percentiles(std::vector<float> values, double lo_pct, double hi_pct) {
  if (values.empty()) fail(ErrorCode::kData, "clip_normalize: no valid pixels");
  std::sort(values.begin(), values.end());
  return {percentile_sorted(values, lo_pct), percentile_sorted(values, hi_pct)};
}

float clip_map(float x, double lo, double hi) {
  if (hi <= lo) return 0.0f;
  const double c = std::clamp(static_cast<double>(x), lo, hi);
  return static_cast<float>((c - lo) / (hi - lo));
}

}  // namespace

std::vector<float> clip_normalize(std::span<const float> band, std::span<const std::uint8_t> valid, double lo_pct,
                                  double hi_pct) {
  if (!valid.empty() && valid.size() != band.size()) fail(ErrorCode::kShapeMismatch, "clip_normalize: mask size");
  std::vector<float> pool;
  pool.reserve(band.size());
  for (std::size_t i = 0; i < band.size(); ++i) {
    if (!std::isfinite(band[i])) fail(ErrorCode::kData, "clip_normalize: non-finite value");
    if (valid.empty() || valid[i]) pool.push_back(band[i]);
  }
  const auto [lo, hi] = valid_percentiles(std::move(pool), lo_pct, hi_pct);
  std::vector<float> out(band.size());
  for (std::size_t i = 0; i < band.size(); ++i) out[i] = clip_map(band[i], lo, hi);
  return out;
}

void clip_normalize_stack(RevisitStack& stack, double lo_pct, double hi_pct) {
  const int n = stack.n(), c = stack.c();
  const std::size_t plane = static_cast<std::size_t>(stack.h()) * stack.w();
  for (int band = 0; band < c; ++band) {
    std::vector<float> pool;
    for (int v = 0; v < n; ++v) {
      const float* src = stack.views.ptr() + (static_cast<std::size_t>(v) * c + band) * plane;
      const std::uint8_t* m = stack.masks.data() + v * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (!std::isfinite(src[i])) fail(ErrorCode::kData, "clip_normalize: non-finite value in " + stack.tile_id);
        if (m[i]) pool.push_back(src[i]);
      }
    }
    const auto [lo, hi] = valid_percentiles(std::move(pool), lo_pct, hi_pct);
    for (int v = 0; v < n; ++v) {
      float* dst = stack.views.ptr() + (static_cast<std::size_t>(v) * c + band) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = clip_map(dst[i], lo, hi);
    }
  }
}

RevisitStack impute_masked(const RevisitStack& stack) {
  RevisitStack out = stack;
  const int n = stack.n(), c = stack.c(), h = stack.h(), w = stack.w();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int n_valid = 0;
      for (int v = 0; v < n; ++v) n_valid += stack.valid(v, y, x);
      if (n_valid == n) continue;
      if (n_valid == 0)
        fail(ErrorCode::kData, "impute_masked: location (" + std::to_string(y) + ", " + std::to_string(x) +
                                   ") is invalid in every view of " + stack.tile_id);
      for (int band = 0; band < c; ++band) {
        double acc = 0;
        for (int v = 0; v < n; ++v)
          if (stack.valid(v, y, x)) acc += stack.views.data[((static_cast<std::size_t>(v) * c + band) * h + y) * w + x];
        const float mean = static_cast<float>(acc / n_valid);
        for (int v = 0; v < n; ++v)
          if (!stack.valid(v, y, x)) out.views.data[((static_cast<std::size_t>(v) * c + band) * h + y) * w + x] = mean;
      }
    }
  std::fill(out.masks.begin(), out.masks.end(), std::uint8_t{1});
  return out;
}

std::vector<float> histogram_match(std::span<const float> source, std::span<const float> reference) {
  if (source.empty() || reference.empty()) fail(ErrorCode::kData, "histogram_match: empty input");
  std::vector<float> ref(reference.begin(), reference.end());
  std::sort(ref.begin(), ref.end());
  const std::size_t n = source.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return source[a] < source[b]; });
  std::vector<float> out(n);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && source[order[j + 1]] == source[order[i]]) ++j;
    const double u = n > 1 ? (0.5 * static_cast<double>(i + j)) / denom : 0.5;
    const float mapped = static_cast<float>(percentile_sorted(ref, 100.0 * u));
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = mapped;
    i = j + 1;
  }
  return out;
}

Tensor<float> histogram_match_bands(const Tensor<float>& source, const Tensor<float>& reference) {
  if (source.ndim() != 3 || reference.ndim() != 3 || source.dim(0) != reference.dim(0))
    fail(ErrorCode::kShapeMismatch, "histogram_match_bands: band count mismatch");
  Tensor<float> out(source.shape);
  const std::size_t sp = static_cast<std::size_t>(source.dim(1)) * source.dim(2);
  const std::size_t rp = static_cast<std::size_t>(reference.dim(1)) * reference.dim(2);
  for (int b = 0; b < source.dim(0); ++b) {
    auto m = histogram_match(std::span<const float>(source.ptr() + b * sp, sp),
                             std::span<const float>(reference.ptr() + b * rp, rp));
    std::copy(m.begin(), m.end(), out.data.begin() + b * sp);
  }
  return out;
}

Tensor<float> downsample_bilinear(const Tensor<float>& image, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) fail(ErrorCode::kShapeMismatch, "downsample_bilinear: zero output dims");
  if (out_h > image.dim(1) || out_w > image.dim(2))
    fail(ErrorCode::kShapeMismatch, "downsample_bilinear: output larger than input");
  return resize_bilinear(image, out_h, out_w);
}

std::vector<int> patch_origins(int extent, int size, int stride) {
  if (size <= 0 || stride <= 0) fail(ErrorCode::kConfig, "patch size and stride must be positive");
  if (extent < size)
    fail(ErrorCode::kData, "tile extent " + std::to_string(extent) + " smaller than patch " + std::to_string(size));
  std::vector<int> origins;
  for (int o = 0;; o += stride) {
    if (o + size >= extent) {
      const int last = extent - size;
      if (origins.empty() || origins.back() != last) origins.push_back(last);
      break;
    }
    origins.push_back(o);
  }
  return origins;
}

std::vector<std::pair<int, int>> extract_patches(int h, int w, int size, int stride) {
  const auto rows = patch_origins(h, size, stride);
  const auto cols = patch_origins(w, size, stride);
  std::vector<std::pair<int, int>> out;
  for (int r : rows)
    for (int c : cols) out.emplace_back(r, c);
  return out;
}

LabelRaster downsample_labels(const LabelRaster& fine, int factor) {
  if (factor <= 0) fail(ErrorCode::kConfig, "downsample_labels: factor must be positive");
  LabelRaster out;
  out.h = (fine.h + factor - 1) / factor;
  out.w = (fine.w + factor - 1) / factor;
  out.labels.assign(static_cast<std::size_t>(out.h) * out.w, kIgnoreLabel);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      if ((y + 1) * factor > fine.h || (x + 1) * factor > fine.w) continue;  // touches padding
      const std::uint8_t c = fine.at(y * factor, x * factor);
      bool uniform = c != kIgnoreLabel;
      for (int dy = 0; dy < factor && uniform; ++dy)
        for (int dx = 0; dx < factor && uniform; ++dx) uniform = fine.at(y * factor + dy, x * factor + dx) == c;
      if (uniform) out.labels[static_cast<std::size_t>(y) * out.w + x] = c;
    }
  return out;
}

}  // namespace sen4x::datapipe
