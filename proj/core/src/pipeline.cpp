#include "sen4x/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sen4x/error.hpp"
#include "sen4x/parallel.hpp"
#include "sen4x/raster.hpp"

namespace sen4x::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string raw_index_to_json(const RawIndex& idx) {
  json tiles = json::array();
  for (const auto& t : idx.tiles) {
    json cands = json::array();
    for (const auto& c : t.candidates)
      cands.push_back({{"id", c.meta.id},
                       {"acq_date", c.meta.acq_date.str()},
                       {"cloud_fraction", c.meta.cloud_fraction},
                       {"invalid_fraction", c.meta.invalid_fraction},
                       {"high_reflectance_fraction", c.meta.high_reflectance_fraction},
                       {"image", c.image},
                       {"mask", c.mask}});
    tiles.push_back({{"tile_id", t.tile_id},
                     {"geo_block", t.geo_block},
                     {"ref_date", t.ref_date.str()},
                     {"hr", t.hr},
                     {"labels", t.labels},
                     {"candidates", std::move(cands)}});
  }
  return json{{"tiles", std::move(tiles)}}.dump(2) + "\n";
}

RawIndex raw_index_from_json(const std::string& text) {
  RawIndex idx;
  try {
    const json j = json::parse(text);
    for (const auto& jt : j.at("tiles")) {
      RawTile t;
      t.tile_id = jt.at("tile_id");
      t.geo_block = jt.at("geo_block");
      t.ref_date = datapipe::CalendarDate::parse(jt.at("ref_date").get<std::string>());
      t.hr = jt.at("hr");
      t.labels = jt.at("labels");
      for (const auto& jc : jt.at("candidates")) {
        RawCandidate c;
        c.meta.id = jc.at("id");
        c.meta.acq_date = datapipe::CalendarDate::parse(jc.at("acq_date").get<std::string>());
        c.meta.ref_date = t.ref_date;
        c.meta.cloud_fraction = jc.at("cloud_fraction");
        c.meta.invalid_fraction = jc.at("invalid_fraction");
        c.meta.high_reflectance_fraction = jc.at("high_reflectance_fraction");
        c.image = jc.at("image");
        c.mask = jc.at("mask");
        t.candidates.push_back(std::move(c));
      }
      idx.tiles.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kData, std::string("malformed raw tile index: ") + e.what());
  }
  return idx;
}

RawIndex read_raw_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kData, "cannot open raw tile index " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return raw_index_from_json(ss.str());
}

void write_raw_index(const RawIndex& idx, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << raw_index_to_json(idx);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

void PrepareConfig::validate() const {
  if (n_views < 1 || scale < 1) fail(ErrorCode::kConfig, "prepare: n_views and scale must be positive");
  if (patch < 1 || stride < 1 || stride > patch) fail(ErrorCode::kConfig, "prepare: need 0 < stride <= patch");
  if (!(0 <= clip_lo && clip_lo < clip_hi && clip_hi <= 100)) fail(ErrorCode::kConfig, "prepare: bad clip percentiles");
}

namespace {

Tensor<float> crop(const Tensor<float>& t, int y0, int x0, int h, int w) {
  // leading dims are kept; the last two are cropped
  const int nd = static_cast<int>(t.ndim());
  const int H = t.dim(nd - 2), W = t.dim(nd - 1);
  Shape s = t.shape;
  s[nd - 2] = h;
  s[nd - 1] = w;
  Tensor<float> out(s);
  const std::size_t planes = t.numel() / (static_cast<std::size_t>(H) * W);
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.data[(p * h + y) * w + x] = t.data[(p * H + y0 + y) * W + x0 + x];
  return out;
}

std::vector<std::uint8_t> crop_u8(const std::vector<std::uint8_t>& v, std::size_t planes, int H, int W, int y0,
                                  int x0, int h, int w) {
  std::vector<std::uint8_t> out(planes * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out[(p * h + y) * w + x] = v[(p * H + y0 + y) * W + x0 + x];
  return out;
}

Tensor<float> clip_normalize_image(const Tensor<float>& img, double lo, double hi) {
  Tensor<float> out(img.shape);
  const std::size_t plane = img.numel() / img.dim(0);
  for (int b = 0; b < img.dim(0); ++b) {
    const auto band = datapipe::clip_normalize(std::span<const float>(img.data.data() + b * plane, plane), {}, lo, hi);
    std::copy(band.begin(), band.end(), out.data.begin() + b * plane);
  }
  return out;
}

}  // namespace

PreparedTile prepare_tile(const RawTile& tile, const fs::path& root, const PrepareConfig& cfg) {
  cfg.validate();
  std::vector<datapipe::RevisitCandidate> metas;
  for (const auto& c : tile.candidates) metas.push_back(c.meta);
  PreparedTile out;
  out.selected = datapipe::select_revisits(metas, cfg.n_views, tile.tile_id, cfg.weights);

  datapipe::RevisitStack stack;
  stack.tile_id = tile.tile_id;
  for (int v = 0; v < cfg.n_views; ++v) {
    const auto it = std::find_if(tile.candidates.begin(), tile.candidates.end(),
                                 [&](const RawCandidate& c) { return c.meta.id == out.selected[v].id; });
    const Tensor<float> img = read_f32(root / it->image);
    Shape mdims;
    const auto mask = read_u8(root / it->mask, &mdims);
    if (img.ndim() != 3 || mdims != Shape{img.dim(1), img.dim(2)})
      fail(ErrorCode::kShapeMismatch, "tile " + tile.tile_id + ": candidate '" + it->meta.id + "' image " +
                                          shape_str(img.shape) + " and mask " + shape_str(mdims) + " disagree");
    if (v == 0) {
      stack.views = Tensor<float>({cfg.n_views, img.dim(0), img.dim(1), img.dim(2)});
      stack.masks.reserve(static_cast<std::size_t>(cfg.n_views) * mask.size());
    } else if (img.dim(0) != stack.c() || img.dim(1) != stack.h() || img.dim(2) != stack.w()) {
      fail(ErrorCode::kShapeMismatch, "tile " + tile.tile_id + ": revisit '" + it->meta.id + "' is " +
                                          shape_str(img.shape) + ", expected " +
                                          shape_str({stack.c(), stack.h(), stack.w()}));
    }
    std::copy(img.data.begin(), img.data.end(), stack.views.data.begin() + v * img.numel());
    stack.masks.insert(stack.masks.end(), mask.begin(), mask.end());
  }
  out.masks = stack.masks;
  datapipe::clip_normalize_stack(stack, cfg.clip_lo, cfg.clip_hi);
  out.stack = datapipe::impute_masked(stack);

  const int th = cfg.scale * out.stack.h(), tw = cfg.scale * out.stack.w();
  const Tensor<float> hr = read_f32(root / tile.hr);
  if (hr.ndim() != 3 || hr.dim(0) != out.stack.c() || hr.dim(1) < th || hr.dim(2) < tw)
    fail(ErrorCode::kShapeMismatch, "tile " + tile.tile_id + ": HR image " + shape_str(hr.shape) +
                                        " cannot cover the " + std::to_string(th) + "×" + std::to_string(tw) +
                                        " target grid");
  const Tensor<float> matched =
      datapipe::histogram_match_bands(clip_normalize_image(hr, cfg.clip_lo, cfg.clip_hi), out.stack.views.slice0(0));
  out.target = (hr.dim(1) == th && hr.dim(2) == tw) ? matched : datapipe::downsample_bilinear(matched, th, tw);

  Shape ldims;
  datapipe::LabelRaster fine;
  fine.labels = read_u8(root / tile.labels, &ldims);
  if (ldims.size() != 2 || ldims[0] % th || ldims[1] % tw || ldims[0] / th != ldims[1] / tw)
    fail(ErrorCode::kShapeMismatch, "tile " + tile.tile_id + ": label grid " + shape_str(ldims) +
                                        " is not an integer multiple of the target grid");
  fine.h = ldims[0];
  fine.w = ldims[1];
  out.labels = datapipe::downsample_labels(fine, ldims[0] / th);
  return out;
}

DatasetManifest prepare_dataset(const fs::path& index_path, const fs::path& out_dir, const PrepareConfig& cfg) {
  cfg.validate();
  const RawIndex idx = read_raw_index(index_path);
  if (idx.tiles.empty()) fail(ErrorCode::kData, "raw tile index lists no tiles");
  const fs::path root = index_path.parent_path();

  // per-tile work is independent; results are collected by tile index so the
  // manifest does not depend on scheduling
  std::vector<std::vector<TileRecord>> per_tile(idx.tiles.size());
  fs::create_directories(out_dir / "patches");
  parallel_for(idx.tiles.size(), [&](std::size_t t) {
    const RawTile& raw = idx.tiles[t];
    const PreparedTile p = prepare_tile(raw, root, cfg);
    const int s = cfg.scale;
    for (const auto& [r, c] : datapipe::extract_patches(p.stack.h(), p.stack.w(), cfg.patch, cfg.stride)) {
      char id[64];
      std::snprintf(id, sizeof id, "_r%03d_c%03d", r, c);
      TileRecord rec;
      rec.tile_id = raw.tile_id + id;
      rec.geo_block = raw.geo_block;
      rec.source_tile = raw.tile_id;
      rec.origin = std::array<int, 2>{r, c};
      for (const auto& sel : p.selected) rec.revisits.push_back({sel.id, sel.weighted});
      const std::string base = "patches/" + rec.tile_id;
      rec.files = {{"views", base + "_views.s4xr"},
                   {"masks", base + "_masks.s4xr"},
                   {"target", base + "_target.s4xr"},
                   {"labels", base + "_labels.s4xr"}};
      write_f32(crop(p.stack.views, r, c, cfg.patch, cfg.patch), out_dir / rec.files["views"]);
      write_u8({cfg.n_views, cfg.patch, cfg.patch},
               crop_u8(p.masks, cfg.n_views, p.stack.h(), p.stack.w(), r, c, cfg.patch, cfg.patch),
               out_dir / rec.files["masks"]);
      write_f32(crop(p.target, s * r, s * c, s * cfg.patch, s * cfg.patch), out_dir / rec.files["target"]);
      write_u8({s * cfg.patch, s * cfg.patch},
               crop_u8(p.labels.labels, 1, p.labels.h, p.labels.w, s * r, s * c, s * cfg.patch, s * cfg.patch),
               out_dir / rec.files["labels"]);
      per_tile[t].push_back(std::move(rec));
    }
  });
  std::vector<TileRecord> records;
  for (auto& v : per_tile)
    for (auto& r : v) records.push_back(std::move(r));
  DatasetManifest m = split_dataset(std::move(records), cfg.fractions, cfg.seed, cfg.created);
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace sen4x::pipeline
