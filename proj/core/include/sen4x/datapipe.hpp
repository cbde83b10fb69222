#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sen4x/tensor.hpp"

namespace sen4x::datapipe {

inline constexpr int kMaxDateDistanceDays = 730;
inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr int kNumClasses = 7;
inline constexpr double kHighReflectance = 0.8;

/// Land-cover class codes 0..6.
enum class LandCover : std::uint8_t { kBuildings, kSealed, kWater, kForest, kGrassland, kCropland, kBareSoil };
const char* class_name(int code);

/// Proleptic Gregorian date.
struct CalendarDate {
  int year = 1970;
  int month = 1;
  int day = 1;

  long long days_since_epoch() const;
  static CalendarDate from_days(long long days);
  /// Parses YYYY-MM-DD.
  static CalendarDate parse(const std::string& text);
  std::string str() const;
  friend bool operator==(const CalendarDate&, const CalendarDate&) = default;
};

inline long long days_between(const CalendarDate& a, const CalendarDate& b) {
  const long long d = a.days_since_epoch() - b.days_since_epoch();
  return d < 0 ? -d : d;
}

struct RevisitCandidate {
  std::string id;
  CalendarDate acq_date;
  CalendarDate ref_date;
  double cloud_fraction = 0;
  double invalid_fraction = 0;          // defective / saturated / snow
  double high_reflectance_fraction = 0;  // share of pixels above kHighReflectance
};

struct RevisitScore {
  double temporal = 0;
  double completeness = 0;
  double spectral = 0;
};

struct ScoreWeights {
  double temporal = 0.5;
  double completeness = 0.3;
  double spectral = 0.2;

  double combine(const RevisitScore& s) const {
    return temporal * s.temporal + completeness * s.completeness + spectral * s.spectral;
  }
};

/// Throws kData if the acquisition is more than 730 days from the reference
/// or a fraction lies outside [0, 1].
RevisitScore score_revisit(const RevisitCandidate& c);

struct RankedRevisit {
  std::string id;
  RevisitScore score;
  double weighted = 0;
  long long date_distance = 0;
};

/// Strict weak order used by select_revisits: higher weighted score first,
/// then smaller date distance, then lexicographically smaller id.
bool ranks_before(const RankedRevisit& a, const RankedRevisit& b);

/// Scores every in-window candidate and returns them best first; candidates
/// outside the date window are dropped.
std::vector<RankedRevisit> rank_revisits(const std::vector<RevisitCandidate>& candidates, const ScoreWeights& w = {});

/// Top-k candidate ids, best first. Throws kData naming `tile_id` when fewer
/// than k usable candidates exist.
std::vector<RankedRevisit> select_revisits(const std::vector<RevisitCandidate>& candidates, int k,
                                           const std::string& tile_id, const ScoreWeights& w = {});

/// Percentile with linear interpolation between order statistics of `sorted`
/// (rank = pct/100·(n − 1)).
double percentile_sorted(std::span<const float> sorted, double pct);

/// Clip to the [lo_pct, hi_pct] percentiles of the valid pixels, then map to
/// [0, 1]. A degenerate range yields zeros. `valid` may be empty (all valid).
std::vector<float> clip_normalize(std::span<const float> band, std::span<const std::uint8_t> valid, double lo_pct = 2,
                                  double hi_pct = 98);

/// N co-registered C×H×W views plus per-view validity masks (1 = valid).
struct RevisitStack {
  Tensor<float> views;               // N×C×H×W
  std::vector<std::uint8_t> masks;   // N×H×W
  std::string tile_id;

  int n() const { return views.dim(0); }
  int c() const { return views.dim(1); }
  int h() const { return views.dim(2); }
  int w() const { return views.dim(3); }
  bool valid(int v, int y, int x) const { return masks[(static_cast<std::size_t>(v) * h() + y) * w() + x] != 0; }
};

/// Per-band clip/normalize over the pooled valid pixels of all views.
void clip_normalize_stack(RevisitStack& stack, double lo_pct = 2, double hi_pct = 98);

/// Replaces masked values by the per-location mean over valid views; all
/// masks become valid. Throws kData naming (y, x) for a location with no
/// valid view.
RevisitStack impute_masked(const RevisitStack& stack);

/// Monotone mapping giving `source` the empirical distribution of
/// `reference`: each source value is assigned its (tie-averaged) empirical
/// CDF position u ∈ [0, 1] and mapped to the reference quantile at u with
/// linear interpolation between order statistics.
std::vector<float> histogram_match(std::span<const float> source, std::span<const float> reference);

/// Band-wise histogram_match of C×H×W images (spatial sizes may differ).
Tensor<float> histogram_match_bands(const Tensor<float>& source, const Tensor<float>& reference);

/// Bilinear downsampling (see resize_bilinear); requires out dims ≤ in dims.
Tensor<float> downsample_bilinear(const Tensor<float>& image, int out_h, int out_w);

/// Window origins along one axis: 0, stride, 2·stride, …, with the last
/// window clamped to end exactly at `extent`.
std::vector<int> patch_origins(int extent, int size, int stride);

/// (row, col) origins of all size×size windows of an H×W tile.
std::vector<std::pair<int, int>> extract_patches(int h, int w, int size = 64, int stride = 48);

struct LabelRaster {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
};

/// Coarse pixel = c iff its whole factor×factor footprint is class c, else
/// the ignore code. Non-divisible rasters are padded with the ignore code.
LabelRaster downsample_labels(const LabelRaster& fine, int factor);

}  // namespace sen4x::datapipe
