#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sen4x/datapipe.hpp"
#include "sen4x/manifest.hpp"

namespace sen4x::synth {

struct SceneSpec {
  std::uint64_t seed = 0;
  int hr_size = 256;
  // buildings, sealed, water, forest, grassland, cropland, bare soil
  std::array<double, 7> class_mix{0.10, 0.12, 0.12, 0.18, 0.18, 0.18, 0.12};
  double blob_sigma = 0;        // HR pixels; 0 → hr_size / 10
  double palette_jitter = 0.03;  // per-instance reflectance jitter
  double texture = 0.02;         // amplitude of smooth within-class texture

  /// Throws kConfig unless the mix is non-negative and sums to 1 ± 1e-9.
  void validate() const;
};

struct Scene {
  Tensor<float> image;  // 4×H×W reflectance in [0, 1]
  datapipe::LabelRaster labels;
};

/// Land-cover scene: smooth blobs of the natural classes, sealed polylines
/// 2–4 px wide and 4–16 px building rectangles, rendered from a per-class
/// palette with NIR raised for vegetation.
Scene gen_scene(const SceneSpec& spec);

/// Mean (R, G, B, NIR) reflectance of a class before jitter.
std::array<float, 4> class_palette(int cls);

struct DegradeSpec {
  int n_views = 8;
  int scale = 4;
  double shift_max = 0.5;    // LR pixels
  double blur_sigma = 1.2;   // HR pixels
  double noise_sigma = 0.01;
  double mask_fraction = 0.05;
  double gain_jitter = 0.02;    // gain drawn from 1 ± gain_jitter
  double offset_jitter = 0.02;  // offset drawn from ±offset_jitter × band mean

  void validate() const;
};

struct ViewParams {
  double dy = 0, dx = 0;  // LR pixels
  std::array<double, 4> gain{1, 1, 1, 1};
  std::array<double, 4> offset{0, 0, 0, 0};
};

struct Degraded {
  datapipe::RevisitStack stack;
  std::vector<ViewParams> params;
};

/// Noise-free LR formation for one view: periodic translation by (dy, dx)
/// LR pixels, periodic Gaussian blur, box-average downsampling.
Tensor<float> degrade_view(const Tensor<float>& hr, double dy, double dx, double blur_sigma, int scale);

/// Revisit stack of `spec.n_views` views; view 0 is unshifted. Masked pixels
/// are stored as 0. A location masked in every view is restored in view 0.
Degraded degrade(const Tensor<float>& hr, const DegradeSpec& spec, std::uint64_t seed);

struct DatasetSpec {
  int n_train = 200;
  int n_val = 40;
  int n_test = 40;
  SceneSpec scene;
  DegradeSpec degrade;
  std::uint64_t seed = 0;
  std::string created;
};

/// Writes one scene per tile under `out_dir` (views, masks, target, labels
/// rasters) and a manifest.json with the requested split sizes.
DatasetManifest write_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

struct RawSpec {
  int n_tiles = 6;
  int lr_size = 64;         // LR tile side
  int scale = 4;            // HR target = scale × LR
  int native_factor = 2;    // HR image and labels are stored this much finer
  int n_candidates = 10;    // revisits per tile, more than are selected
  SceneSpec scene;          // hr_size is ignored
  DegradeSpec degrade;      // n_views and scale are ignored
  std::uint64_t seed = 0;
  std::string ref_date = "2023-06-15";
};

/// Writes unprocessed tiles (raw-radiometry revisits with metadata and
/// masks, a finer HR image and label raster) plus tiles.json in the layout
/// read by the prepare step. One geo block per tile.
void write_raw_tiles(const RawSpec& spec, const std::filesystem::path& out_dir);

}  // namespace sen4x::synth
