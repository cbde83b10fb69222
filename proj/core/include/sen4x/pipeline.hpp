#pragma once

// Raw tiles → patch dataset.
//
// Input is a JSON index (tiles.json) with one record per tile:
//   {"tile_id", "geo_block", "ref_date": "YYYY-MM-DD",
//    "hr": C×H'×W' float32 raster, "labels": uint8 raster on a grid that is an
//    integer multiple of the HR target grid,
//    "candidates": [{"id", "acq_date", "cloud_fraction", "invalid_fraction",
//                    "high_reflectance_fraction", "image": C×h×w float32,
//                    "mask": h×w uint8 (1 = valid)}]}
// Raster paths are relative to the index file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sen4x/datapipe.hpp"
#include "sen4x/manifest.hpp"

namespace sen4x::pipeline {

struct RawCandidate {
  datapipe::RevisitCandidate meta;
  std::string image;
  std::string mask;
};

struct RawTile {
  std::string tile_id;
  int geo_block = 0;
  datapipe::CalendarDate ref_date;
  std::string hr;
  std::string labels;
  std::vector<RawCandidate> candidates;
};

struct RawIndex {
  std::vector<RawTile> tiles;
};

std::string raw_index_to_json(const RawIndex& idx);
RawIndex raw_index_from_json(const std::string& text);
RawIndex read_raw_index(const std::filesystem::path& path);
void write_raw_index(const RawIndex& idx, const std::filesystem::path& path);

struct PrepareConfig {
  int n_views = 8;
  int scale = 4;
  int patch = 64;   // LR pixels
  int stride = 48;  // LR pixels
  double clip_lo = 2;
  double clip_hi = 98;
  datapipe::ScoreWeights weights;
  SplitFractions fractions;
  std::uint64_t seed = 0;
  std::string created;

  void validate() const;
};

struct PreparedTile {
  datapipe::RevisitStack stack;           // normalized and imputed
  std::vector<std::uint8_t> masks;        // validity before imputation
  std::vector<datapipe::RankedRevisit> selected;
  Tensor<float> target;                   // C×(s·h)×(s·w)
  datapipe::LabelRaster labels;           // on the target grid
};

/// Selection → per-band clipping over the pooled stack → imputation; the HR
/// image is clipped, histogram-matched to the best revisit and bilinearly
/// resampled to scale × the LR grid; labels are purified onto that grid.
PreparedTile prepare_tile(const RawTile& tile, const std::filesystem::path& root, const PrepareConfig& cfg);

/// Prepares every tile, cuts patch×patch windows (stride `stride`) and
/// writes them plus manifest.json under `out_dir`; splits follow geo blocks.
DatasetManifest prepare_dataset(const std::filesystem::path& index_path, const std::filesystem::path& out_dir,
                                const PrepareConfig& cfg);

}  // namespace sen4x::pipeline
