#include "sen4x/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sen4x/error.hpp"
#include "sen4x/pipeline.hpp"
#include "sen4x/raster.hpp"
#include "sen4x/resample.hpp"

namespace sen4x::synth {

namespace {

constexpr int kBands = 4;
constexpr int kBuildings = 0;
constexpr int kSealed = 1;
constexpr int kFirstBlob = 2;

// Independent generator per purpose so adding draws in one stage does not
// perturb the others.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(sq);
}

Tensor<float> smooth_noise(int channels, int size, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<float> n01(0.0f, 1.0f);
  Tensor<float> f({channels, size, size});
  for (float& v : f.data) v = n01(rng);
  f = gaussian_blur_periodic(f, sigma);
  // unit variance per channel
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int c = 0; c < channels; ++c) {
    float* p = f.ptr() + c * plane;
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    mean /= plane;
    for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    const double sd = std::sqrt(sq / plane) + 1e-12;
    for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>((p[i] - mean) / sd);
  }
  return f;
}

// Argmax over biased noise fields, with biases adjusted until each class
// covers roughly its target share.
void fill_blobs(std::vector<std::uint8_t>& labels, int size, const std::vector<int>& classes,
                const std::vector<double>& shares, double sigma, std::mt19937_64& rng) {
  const int k = static_cast<int>(classes.size());
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (k == 1) {
    std::fill(labels.begin(), labels.end(), static_cast<std::uint8_t>(classes[0]));
    return;
  }
  const Tensor<float> fields = smooth_noise(k, size, sigma, rng);
  std::vector<double> bias(k, 0.0);
  std::vector<int> winner(plane);
  for (int iter = 0; iter < 80; ++iter) {
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      double best_v = fields[i] + bias[0];
      for (int c = 1; c < k; ++c) {
        const double v = fields[c * plane + i] + bias[c];
        if (v > best_v) best_v = v, best = c;
      }
      winner[i] = best;
      ++count[best];
    }
    for (int c = 0; c < k; ++c) bias[c] += 1.5 * (shares[c] - static_cast<double>(count[c]) / plane);
  }
  for (std::size_t i = 0; i < plane; ++i) labels[i] = static_cast<std::uint8_t>(classes[winner[i]]);
}

void stamp_disk(std::vector<std::uint8_t>& labels, int size, double cy, double cx, double radius, std::uint8_t cls) {
  const int y0 = static_cast<int>(std::floor(cy - radius)), y1 = static_cast<int>(std::ceil(cy + radius));
  const int x0 = static_cast<int>(std::floor(cx - radius)), x1 = static_cast<int>(std::ceil(cx + radius));
  for (int y = std::max(0, y0); y <= std::min(size - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(size - 1, x1); ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      if (dy * dy + dx * dx <= radius * radius) labels[static_cast<std::size_t>(y) * size + x] = cls;
    }
}

std::size_t count_class(const std::vector<std::uint8_t>& labels, int cls) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), static_cast<std::uint8_t>(cls)));
}

void draw_roads(std::vector<std::uint8_t>& labels, int size, std::size_t target, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> width(2, 4);
  for (int guard = 0; guard < 200 && count_class(labels, kSealed) < target; ++guard) {
    const double radius = width(rng) / 2.0;
    double y = u01(rng) * size, x = u01(rng) * size;
    double heading = u01(rng) * 2 * M_PI;
    const int segments = 2 + static_cast<int>(u01(rng) * 3);
    for (int s = 0; s < segments; ++s) {
      const double len = (0.2 + 0.4 * u01(rng)) * size;
      for (double t = 0; t < len; t += 0.5) {
        stamp_disk(labels, size, y, x, radius, kSealed);
        y += 0.5 * std::sin(heading);
        x += 0.5 * std::cos(heading);
        if (count_class(labels, kSealed) >= target && t > 4) break;
      }
      heading += (u01(rng) - 0.5) * M_PI / 2;
    }
  }
}

struct Rect {
  int y, x, h, w;
};

std::vector<Rect> draw_buildings(std::vector<std::uint8_t>& labels, int size, std::size_t target,
                                 std::mt19937_64& rng) {
  std::uniform_int_distribution<int> side(4, 16);
  std::vector<Rect> rects;
  std::size_t covered = count_class(labels, kBuildings);
  for (int guard = 0; guard < 10000 && covered < target; ++guard) {
    const int h = std::min(side(rng), size), w = std::min(side(rng), size);
    const int y = std::uniform_int_distribution<int>(0, size - h)(rng);
    const int x = std::uniform_int_distribution<int>(0, size - w)(rng);
    for (int yy = y; yy < y + h; ++yy)
      for (int xx = x; xx < x + w; ++xx) {
        auto& l = labels[static_cast<std::size_t>(yy) * size + xx];
        if (l != kBuildings) ++covered;
        l = kBuildings;
      }
    rects.push_back({y, x, h, w});
  }
  return rects;
}

}  // namespace

void SceneSpec::validate() const {
  if (hr_size < 8) fail(ErrorCode::kConfig, "scene: hr_size must be at least 8");
  double sum = 0;
  for (double m : class_mix) {
    if (m < 0) fail(ErrorCode::kConfig, "scene: class_mix entries must be non-negative");
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::kConfig, "scene: class_mix sums to " + std::to_string(sum));
  if (blob_sigma < 0 || palette_jitter < 0 || texture < 0) fail(ErrorCode::kConfig, "scene: negative scale parameter");
}

std::array<float, 4> class_palette(int cls) {
  static constexpr std::array<std::array<float, 4>, 7> kPalette{{
      {0.38f, 0.35f, 0.33f, 0.40f},  // buildings: bright roofs
      {0.20f, 0.20f, 0.21f, 0.23f},  // sealed
      {0.04f, 0.07f, 0.10f, 0.02f},  // water: NIR absorbed
      {0.03f, 0.07f, 0.04f, 0.42f},  // forest
      {0.08f, 0.15f, 0.07f, 0.36f},  // grassland
      {0.14f, 0.17f, 0.08f, 0.30f},  // cropland
      {0.28f, 0.22f, 0.16f, 0.30f},  // bare soil
  }};
  if (cls < 0 || cls >= 7) fail(ErrorCode::kData, "class_palette: class " + std::to_string(cls) + " out of range");
  return kPalette[cls];
}

Scene gen_scene(const SceneSpec& spec) {
  spec.validate();
  const int n = spec.hr_size;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  const double sigma = spec.blob_sigma > 0 ? spec.blob_sigma : n / 10.0;

  Scene scene;
  scene.labels = {n, n, std::vector<std::uint8_t>(plane, 0)};
  auto& labels = scene.labels.labels;

  std::vector<int> blob_classes;
  std::vector<double> shares;
  double blob_total = 0;
  for (int c = kFirstBlob; c < 7; ++c) blob_total += spec.class_mix[c];
  for (int c = kFirstBlob; c < 7; ++c)
    if (spec.class_mix[c] > 0) {
      blob_classes.push_back(c);
      shares.push_back(spec.class_mix[c] / blob_total);
    }
  auto blob_rng = stream(spec.seed, 1);
  if (!blob_classes.empty()) {
    fill_blobs(labels, n, blob_classes, shares, sigma, blob_rng);
  } else {
    std::fill(labels.begin(), labels.end(), static_cast<std::uint8_t>(spec.class_mix[kSealed] > 0 ? kSealed : kBuildings));
  }

  auto road_rng = stream(spec.seed, 2);
  if (spec.class_mix[kSealed] > 0 && spec.class_mix[kSealed] < 1)
    draw_roads(labels, n, static_cast<std::size_t>(spec.class_mix[kSealed] * plane), road_rng);
  auto bld_rng = stream(spec.seed, 3);
  std::vector<Rect> rects;
  if (spec.class_mix[kBuildings] > 0 && spec.class_mix[kBuildings] < 1)
    rects = draw_buildings(labels, n, static_cast<std::size_t>(spec.class_mix[kBuildings] * plane), bld_rng);

  // per-class colour for this scene, per-rectangle roof colour on top
  auto col_rng = stream(spec.seed, 4);
  std::uniform_real_distribution<float> jit(-1.0f, 1.0f);
  std::array<std::array<float, 4>, 7> colour;
  for (int c = 0; c < 7; ++c) {
    colour[c] = class_palette(c);
    for (float& v : colour[c]) v = std::max(0.0f, v + static_cast<float>(spec.palette_jitter) * jit(col_rng));
  }
  std::vector<std::array<float, 4>> roof(rects.size());
  for (auto& r : roof) {
    r = colour[kBuildings];
    const float shade = 2.0f * static_cast<float>(spec.palette_jitter) * jit(col_rng);
    for (float& v : r) v = std::max(0.0f, v + shade);
  }

  auto tex_rng = stream(spec.seed, 5);
  const Tensor<float> tex = smooth_noise(1, n, 1.5, tex_rng);

  scene.image = Tensor<float>({kBands, n, n});
  for (std::size_t i = 0; i < plane; ++i)
    for (int b = 0; b < kBands; ++b) scene.image[b * plane + i] = colour[labels[i]][b];
  // later rectangles are painted over earlier ones, as in the label raster
  for (std::size_t r = 0; r < rects.size(); ++r)
    for (int y = rects[r].y; y < rects[r].y + rects[r].h; ++y)
      for (int x = rects[r].x; x < rects[r].x + rects[r].w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * n + x;
        if (labels[i] != kBuildings) continue;
        for (int b = 0; b < kBands; ++b) scene.image[b * plane + i] = roof[r][b];
      }
  for (std::size_t i = 0; i < plane; ++i)
    for (int b = 0; b < kBands; ++b) {
      float& v = scene.image[b * plane + i];
      v = std::clamp(v * (1.0f + static_cast<float>(spec.texture) * 4.0f * tex[i]), 0.0f, 1.0f);
    }
  return scene;
}

void DegradeSpec::validate() const {
  if (n_views < 1) fail(ErrorCode::kConfig, "degrade: n_views must be positive");
  if (scale < 1) fail(ErrorCode::kConfig, "degrade: scale must be positive");
  if (!(shift_max >= 0 && shift_max < 1)) fail(ErrorCode::kConfig, "degrade: shift_max must lie in [0, 1)");
  if (blur_sigma < 0 || noise_sigma < 0) fail(ErrorCode::kConfig, "degrade: sigmas must be non-negative");
  if (!(mask_fraction >= 0 && mask_fraction < 1)) fail(ErrorCode::kConfig, "degrade: mask_fraction must lie in [0, 1)");
  if (gain_jitter < 0 || offset_jitter < 0) fail(ErrorCode::kConfig, "degrade: jitter must be non-negative");
}

namespace {

// out(y, x) = in(y + sy, x + sx), periodic, bilinear between grid points.
Tensor<float> translate_periodic(const Tensor<float>& img, double sy, double sx) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double fy = std::floor(sy), fx = std::floor(sx);
  const double ay = sy - fy, ax = sx - fx;
  const int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
  auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
  Tensor<float> out(img.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const int y0 = wrap(y + iy, h), y1 = wrap(y + iy + 1, h);
      for (int x = 0; x < w; ++x) {
        const int x0 = wrap(x + ix, w), x1 = wrap(x + ix + 1, w);
        const double v = (1 - ay) * ((1 - ax) * img.at(ch, y0, x0) + ax * img.at(ch, y0, x1)) +
                         ay * ((1 - ax) * img.at(ch, y1, x0) + ax * img.at(ch, y1, x1));
        out.at(ch, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

}  // namespace

Tensor<float> degrade_view(const Tensor<float>& hr, double dy, double dx, double blur_sigma, int scale) {
  if (hr.ndim() != 3) fail(ErrorCode::kShapeMismatch, "degrade: expected C×H×W, got " + shape_str(hr.shape));
  if (hr.dim(1) % scale || hr.dim(2) % scale)
    fail(ErrorCode::kShapeMismatch, "degrade: HR dims " + shape_str(hr.shape) + " not divisible by scale " +
                                        std::to_string(scale));
  Tensor<float> img = (dy == 0 && dx == 0) ? hr : translate_periodic(hr, dy * scale, dx * scale);
  if (blur_sigma > 0) img = gaussian_blur_periodic(img, blur_sigma);
  return box_downsample(img, scale);
}

Degraded degrade(const Tensor<float>& hr, const DegradeSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int c = hr.dim(0);
  if (c > 4) fail(ErrorCode::kShapeMismatch, "degrade: at most 4 bands supported");
  const int h = hr.dim(1) / spec.scale, w = hr.dim(2) / spec.scale;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t view_size = c * plane;

  Degraded out;
  out.stack.views = Tensor<float>({spec.n_views, c, h, w});
  out.stack.masks.assign(spec.n_views * plane, 1);

  auto rng = stream(seed, 11);
  std::uniform_real_distribution<double> u11(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int v = 0; v < spec.n_views; ++v) {
    ViewParams p;
    if (v > 0) {
      p.dy = spec.shift_max * u11(rng);
      p.dx = spec.shift_max * u11(rng);
    }
    const Tensor<float> lr = degrade_view(hr, p.dy, p.dx, spec.blur_sigma, spec.scale);
    for (int b = 0; b < c; ++b) {
      double mean = 0;
      for (std::size_t i = 0; i < plane; ++i) mean += lr[b * plane + i];
      mean /= static_cast<double>(plane);
      p.gain[b] = 1.0 + spec.gain_jitter * u11(rng);
      p.offset[b] = spec.offset_jitter * mean * u11(rng);
    }
    float* dst = out.stack.views.ptr() + v * view_size;
    for (int b = 0; b < c; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        double val = p.gain[b] * lr[b * plane + i] + p.offset[b];
        if (spec.noise_sigma > 0) val = std::clamp(val + spec.noise_sigma * noise(rng), 0.0, 1.0);
        dst[b * plane + i] = static_cast<float>(val);
      }
    out.params.push_back(p);
  }

  // exact per-view invalid count
  const auto n_masked = static_cast<std::size_t>(std::llround(spec.mask_fraction * static_cast<double>(plane)));
  std::vector<std::size_t> order(plane);
  for (int v = 0; v < spec.n_views; ++v) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < n_masked; ++j) out.stack.masks[v * plane + order[j]] = 0;
  }
  for (std::size_t i = 0; i < plane; ++i) {
    bool any = false;
    for (int v = 0; v < spec.n_views && !any; ++v) any = out.stack.masks[v * plane + i] != 0;
    if (!any) out.stack.masks[i] = 1;
  }
  for (int v = 0; v < spec.n_views; ++v)
    for (std::size_t i = 0; i < plane; ++i)
      if (!out.stack.masks[v * plane + i])
        for (int b = 0; b < c; ++b) out.stack.views[v * view_size + b * plane + i] = 0.0f;
  return out;
}

DatasetManifest write_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_train <= 0 || spec.n_val <= 0 || spec.n_test < 0)
    fail(ErrorCode::kConfig, "synth: need positive train and val counts");
  spec.scene.validate();
  spec.degrade.validate();
  DatasetManifest m;
  m.seed = spec.seed;
  m.created = spec.created;
  const int total = spec.n_train + spec.n_val + spec.n_test;
  for (int t = 0; t < total; ++t) {
    SceneSpec ss = spec.scene;
    ss.seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(t);
    const Scene scene = gen_scene(ss);
    const Degraded d = degrade(scene.image, spec.degrade, ss.seed ^ 0xd6e8feb86659fd93ULL);

    char id[32];
    std::snprintf(id, sizeof id, "synth_%05d", t);
    TileRecord rec;
    rec.tile_id = id;
    rec.geo_block = t;
    rec.split = t < spec.n_train ? Split::kTrain : (t < spec.n_train + spec.n_val ? Split::kVal : Split::kTest);
    for (int v = 0; v < spec.degrade.n_views; ++v) rec.revisits.push_back({rec.tile_id + "_v" + std::to_string(v), 1.0});
    const std::string base = std::string("tiles/") + id;
    rec.files = {{"views", base + "_views.s4xr"},
                 {"masks", base + "_masks.s4xr"},
                 {"target", base + "_target.s4xr"},
                 {"labels", base + "_labels.s4xr"}};
    write_f32(d.stack.views, out_dir / rec.files["views"]);
    write_u8({spec.degrade.n_views, d.stack.h(), d.stack.w()}, d.stack.masks, out_dir / rec.files["masks"]);
    write_f32(scene.image, out_dir / rec.files["target"]);
    write_u8({scene.labels.h, scene.labels.w}, scene.labels.labels, out_dir / rec.files["labels"]);
    m.tiles.push_back(std::move(rec));
  }
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

void write_raw_tiles(const RawSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_tiles < 1 || spec.lr_size < 1 || spec.scale < 1 || spec.native_factor < 1 || spec.n_candidates < 1)
    fail(ErrorCode::kConfig, "synth raw: sizes and counts must be positive");
  spec.scene.validate();
  // candidate 0 is the unshifted, cloud-free acquisition; the others get
  // cloud rectangles instead of random pixel dropout, so every location stays
  // observable whatever subset is selected
  DegradeSpec deg = spec.degrade;
  deg.n_views = spec.n_candidates;
  deg.scale = spec.scale;
  deg.mask_fraction = 0;
  deg.validate();
  const auto ref = datapipe::CalendarDate::parse(spec.ref_date);
  const int hr = spec.lr_size * spec.scale, lr = spec.lr_size;
  const std::size_t plane = static_cast<std::size_t>(lr) * lr;

  pipeline::RawIndex idx;
  for (int t = 0; t < spec.n_tiles; ++t) {
    const std::uint64_t tseed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(t);
    SceneSpec ss = spec.scene;
    ss.seed = tseed;
    ss.hr_size = hr * spec.native_factor;
    const Scene scene = gen_scene(ss);
    const Tensor<float> target = datapipe::downsample_bilinear(scene.image, hr, hr);
    const Degraded d = degrade(target, deg, tseed ^ 0x9e3779b97f4a7c15ULL);

    char id[32];
    std::snprintf(id, sizeof id, "raw_%04d", t);
    pipeline::RawTile tile;
    tile.tile_id = id;
    tile.geo_block = t;
    tile.ref_date = ref;
    tile.hr = std::string("raw/") + id + "_hr.s4xr";
    tile.labels = std::string("raw/") + id + "_labels.s4xr";
    write_f32(scene.image, out_dir / tile.hr);
    write_u8({scene.labels.h, scene.labels.w}, scene.labels.labels, out_dir / tile.labels);

    auto rng = stream(tseed, 23);
    std::uniform_int_distribution<int> days(-600, 600);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int v = 0; v < spec.n_candidates; ++v) {
      Tensor<float> img = d.stack.views.slice0(v);
      std::vector<std::uint8_t> mask(plane, 1);
      if (v > 0) {
        // one rectangular cloud covering up to ~30% of the tile
        const int ch = 1 + static_cast<int>(u01(rng) * 0.55 * lr), cw = 1 + static_cast<int>(u01(rng) * 0.55 * lr);
        const int y0 = static_cast<int>(u01(rng) * (lr - ch + 1)), x0 = static_cast<int>(u01(rng) * (lr - cw + 1));
        for (int y = y0; y < y0 + ch; ++y)
          for (int x = x0; x < x0 + cw; ++x) mask[static_cast<std::size_t>(y) * lr + x] = 0;
      }
      // raw radiometry: an affine sensor response, clouds bright
      std::size_t bright = 0, masked = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        masked += mask[i] == 0;
        for (int b = 0; b < img.dim(0); ++b) {
          float& x = img.data[b * plane + i];
          x = mask[i] ? 0.04f + 0.9f * x : 0.9f;
        }
        bright += img.data[i] > datapipe::kHighReflectance;
      }
      pipeline::RawCandidate c;
      c.meta.id = std::string(id) + "_c" + std::to_string(v);
      c.meta.ref_date = ref;
      // with ten or more candidates the last one falls outside the ±2-year
      // window, so selection has something to reject
      const bool stale = v == spec.n_candidates - 1 && spec.n_candidates >= 10;
      const int offset = v == 0 ? 3 : (stale ? 800 : days(rng));
      c.meta.acq_date = datapipe::CalendarDate::from_days(ref.days_since_epoch() + offset);
      c.meta.cloud_fraction = static_cast<double>(masked) / static_cast<double>(plane);
      c.meta.invalid_fraction = 0;
      c.meta.high_reflectance_fraction = static_cast<double>(bright) / static_cast<double>(plane);
      c.image = "raw/" + c.meta.id + "_img.s4xr";
      c.mask = "raw/" + c.meta.id + "_mask.s4xr";
      write_f32(img, out_dir / c.image);
      write_u8({lr, lr}, mask, out_dir / c.mask);
      tile.candidates.push_back(std::move(c));
    }
    idx.tiles.push_back(std::move(tile));
  }
  pipeline::write_raw_index(idx, out_dir / "tiles.json");
}

}  // namespace sen4x::synth
