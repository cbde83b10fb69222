#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include <unistd.h>

#include "sen4x/error.hpp"
#include "sen4x/parallel.hpp"
#include "sen4x/pipeline.hpp"
#include "sen4x/raster.hpp"
#include "sen4x/synthdata.hpp"

using namespace sen4x;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("sen4x_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file_bytes(e.path());
  return out;
}

synth::RawSpec small_raw() {
  synth::RawSpec r;
  r.n_tiles = 4;
  r.lr_size = 24;
  r.seed = 5;
  return r;
}

pipeline::PrepareConfig small_prepare() {
  pipeline::PrepareConfig c;
  c.patch = 16;
  c.stride = 12;
  c.seed = 3;
  c.created = "2024-01-01T00:00:00Z";
  return c;
}

}  // namespace

TEST(RawIndex, JsonRoundTrip) {
  TempDir d("rawidx");
  synth::write_raw_tiles(small_raw(), d.path);
  const auto idx = pipeline::read_raw_index(d.path / "tiles.json");
  ASSERT_EQ(idx.tiles.size(), 4u);
  EXPECT_EQ(idx.tiles[0].candidates.size(), 10u);
  EXPECT_EQ(pipeline::raw_index_to_json(pipeline::raw_index_from_json(pipeline::raw_index_to_json(idx))),
            pipeline::raw_index_to_json(idx));
  EXPECT_THROW(pipeline::raw_index_from_json("{\"tiles\": [{}]}"), Error);
}

TEST(PrepareTile, SelectionNormalizationAndGrids) {
  TempDir d("preptile");
  synth::write_raw_tiles(small_raw(), d.path);
  const auto idx = pipeline::read_raw_index(d.path / "tiles.json");
  const auto p = pipeline::prepare_tile(idx.tiles[1], d.path, small_prepare());
  ASSERT_EQ(p.selected.size(), 8u);
  for (const auto& s : p.selected) EXPECT_NE(s.id, idx.tiles[1].candidates.back().meta.id) << "stale revisit selected";
  EXPECT_EQ(p.selected[0].id, idx.tiles[1].candidates[0].meta.id);
  EXPECT_EQ(p.stack.views.shape, (Shape{8, 4, 24, 24}));
  for (float v : p.stack.views.data) ASSERT_TRUE(v >= 0 && v <= 1);
  for (auto m : p.stack.masks) ASSERT_EQ(m, 1);
  EXPECT_EQ(p.target.shape, (Shape{4, 96, 96}));
  for (float v : p.target.data) ASSERT_TRUE(v >= 0 && v <= 1);
  EXPECT_EQ(p.labels.h, 96);
  // purified labels: each coarse label is either ignore or the uniform class
  // of its 2×2 footprint in the stored raster
  Shape dims;
  const auto fine = read_u8(d.path / idx.tiles[1].labels, &dims);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      const auto l = p.labels.at(y, x);
      bool uniform = true;
      const auto f0 = fine[(2 * y) * dims[1] + 2 * x];
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) uniform = uniform && fine[(2 * y + dy) * dims[1] + 2 * x + dx] == f0;
      ASSERT_EQ(l, uniform ? f0 : 255);
    }
}

TEST(PrepareTile, TooFewCandidatesNamesTheTile) {
  TempDir d("fewcand");
  auto raw = small_raw();
  raw.n_candidates = 6;
  synth::write_raw_tiles(raw, d.path);
  const auto idx = pipeline::read_raw_index(d.path / "tiles.json");
  try {
    pipeline::prepare_tile(idx.tiles[2], d.path, small_prepare());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kData);
    EXPECT_NE(std::string(e.what()).find(idx.tiles[2].tile_id), std::string::npos);
  }
}

TEST(PrepareDataset, PatchesSplitsDeterminismAndUntouchedInputs) {
  TempDir d("prepds");
  synth::write_raw_tiles(small_raw(), d.path / "in");
  const auto before = snapshot(d.path / "in");
  const int saved = num_threads();
  set_num_threads(1);
  const auto m = pipeline::prepare_dataset(d.path / "in" / "tiles.json", d.path / "a", small_prepare());
  set_num_threads(3);
  pipeline::prepare_dataset(d.path / "in" / "tiles.json", d.path / "b", small_prepare());
  set_num_threads(saved);

  EXPECT_EQ(snapshot(d.path / "in"), before);
  EXPECT_EQ(snapshot(d.path / "a"), snapshot(d.path / "b"));
  ASSERT_EQ(m.tiles.size(), 16u);  // origins {0, 8} per axis, four tiles
  std::map<int, Split> block_split;
  for (const auto& t : m.tiles) {
    auto [it, fresh] = block_split.emplace(t.geo_block, t.split);
    EXPECT_EQ(it->second, t.split);
    ASSERT_TRUE(t.origin.has_value());
  }
  const auto back = read_manifest(d.path / "a" / "manifest.json");
  const auto& rec = back.tiles[3];
  EXPECT_EQ(read_f32(d.path / "a" / rec.files.at("views")).shape, (Shape{8, 4, 16, 16}));
  EXPECT_EQ(read_f32(d.path / "a" / rec.files.at("target")).shape, (Shape{4, 64, 64}));
  Shape ld;
  read_u8(d.path / "a" / rec.files.at("labels"), &ld);
  EXPECT_EQ(ld, (Shape{64, 64}));
}

TEST(PrepareDataset, PatchLargerThanTileIsRejected) {
  TempDir d("bigpatch");
  synth::write_raw_tiles(small_raw(), d.path / "in");
  auto c = small_prepare();
  c.patch = 32;
  c.stride = 16;
  EXPECT_THROW(pipeline::prepare_dataset(d.path / "in" / "tiles.json", d.path / "out", c), Error);
}
