#include <gtest/gtest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <set>

#include "sen4x/checkpoint.hpp"
#include "sen4x/error.hpp"
#include "sen4x/manifest.hpp"
#include "sen4x/raster.hpp"
#include "support/oracles.hpp"

using namespace sen4x;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sen4x_io_" + std::to_string(::getpid())) / name;
  fs::create_directories(p.parent_path());
  return p;
}

ErrorCode decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_raster(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorCode::kConfig;
}

std::vector<TileRecord> blocks(int n_blocks, int tiles_per_block) {
  std::vector<TileRecord> tiles;
  for (int b = 0; b < n_blocks; ++b)
    for (int t = 0; t < tiles_per_block; ++t) {
      TileRecord r;
      r.tile_id = "b" + std::to_string(b) + "_t" + std::to_string(t);
      r.geo_block = b;
      tiles.push_back(r);
    }
  return tiles;
}

}  // namespace

TEST(Raster, Float32RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  auto t = oracle::random_tensor<float>({4, 64, 64}, rng);
  t[5] = -0.0f;
  t[6] = std::numeric_limits<float>::denorm_min();
  const fs::path p = scratch("r.s4xr");
  write_f32(t, p);
  const auto bytes = read_file_bytes(p);
  EXPECT_EQ(bytes.size(), 8 + 3 * 4 + t.numel() * 4);
  const Tensor<float> back = read_f32(p);
  EXPECT_EQ(back.shape, t.shape);
  EXPECT_EQ(std::memcmp(back.ptr(), t.ptr(), t.numel() * 4), 0);
  EXPECT_EQ(encode_raster(RasterTensor::from(back)), bytes);
}

TEST(Raster, HeaderLayout) {
  const auto bytes = encode_raster(RasterTensor::from_u8({2, 3}, {1, 2, 3, 4, 5, 6}));
  const std::vector<std::uint8_t> expect{'S', '4', 'X', 'R', 1, 1, 2, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(bytes, expect);
}

TEST(Raster, DistinctErrorCodes) {
  auto good = encode_raster(RasterTensor::from(Tensor<float>({2, 2}, 1.0f)));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(decode_error(bad_magic), ErrorCode::kBadMagic);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(decode_error(bad_version), ErrorCode::kBadVersion);
  auto bad_dtype = good;
  bad_dtype[5] = 7;
  EXPECT_EQ(decode_error(bad_dtype), ErrorCode::kDtypeMismatch);
  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(decode_error(truncated), ErrorCode::kTruncated);
  auto padded = good;
  padded.push_back(0);
  EXPECT_EQ(decode_error(padded), ErrorCode::kTruncated);
  EXPECT_THROW(decode_raster(good).as_u8(), Error);
  EXPECT_THROW(read_raster(scratch("missing.s4xr")), Error);
}

TEST(Manifest, WriteReadWriteIsByteIdentical) {
  auto tiles = blocks(10, 2);
  tiles[0].revisits = {{"r0", 0.9}, {"r1", 0.25}};
  tiles[0].files = {{"views", "tiles/a.s4xr"}};
  tiles[1].source_tile = "b0_t0";
  tiles[1].origin = std::array<int, 2>{48, 0};
  const DatasetManifest m = split_dataset(tiles, {}, 7, "2024-01-01T00:00:00Z");
  const fs::path p = scratch("manifest.json");
  write_manifest(m, p);
  const auto first = read_file_bytes(p);
  write_manifest(read_manifest(p, false), p);
  EXPECT_EQ(read_file_bytes(p), first);
  EXPECT_THROW(read_manifest(p, true), Error);  // tiles/a.s4xr does not exist
}

TEST(SplitDataset, TenBlocksSplitSevenTwoOne) {
  const DatasetManifest m = split_dataset(blocks(10, 3), {}, 1, "");
  std::map<Split, std::set<int>> by_split;
  for (const auto& t : m.tiles) by_split[t.split].insert(t.geo_block);
  EXPECT_EQ(by_split[Split::kTrain].size(), 7u);
  EXPECT_EQ(by_split[Split::kVal].size(), 2u);
  EXPECT_EQ(by_split[Split::kTest], (std::set<int>{9}));
}

TEST(SplitDataset, DeterministicDisjointAndWithinOneBlock) {
  for (int n : {3, 4, 7, 13, 29}) {
    const auto a = split_dataset(blocks(n, 2), {}, 42, "x");
    const auto b = split_dataset(blocks(n, 2), {}, 42, "x");
    EXPECT_EQ(manifest_to_json(a), manifest_to_json(b));
    std::map<int, Split> block_split;
    std::map<Split, std::set<int>> per;
    std::set<std::string> ids;
    for (const auto& t : a.tiles) {
      EXPECT_TRUE(ids.insert(t.tile_id).second);
      auto [it, fresh] = block_split.emplace(t.geo_block, t.split);
      EXPECT_EQ(it->second, t.split) << "block split across splits";
      per[t.split].insert(t.geo_block);
    }
    for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) EXPECT_FALSE(per[sp].empty());
    // with three blocks every split gets exactly one
    EXPECT_NEAR(static_cast<double>(per[Split::kTrain].size()), 0.7 * n, n == 3 ? 1.1 : 1.0);
    EXPECT_NEAR(static_cast<double>(per[Split::kVal].size()), 0.2 * n, 1.0);
    EXPECT_NEAR(static_cast<double>(per[Split::kTest].size()), 0.1 * n, 1.0);
    // test blocks are a contiguous run at the top of the id range
    const auto& test = per[Split::kTest];
    EXPECT_EQ(*test.rbegin() - *test.begin() + 1, static_cast<int>(test.size()));
    EXPECT_EQ(*test.rbegin(), n - 1);
  }
  EXPECT_THROW(split_dataset(blocks(2, 5), {}, 1, ""), Error);
}

TEST(Checkpoint, RoundTripIsByteExactWithOptimizerState) {
  std::mt19937_64 rng(3);
  Checkpoint ck;
  ck.kind = "sr";
  ck.config_json = R"({"a":1})";
  ck.step = 17;
  ck.seed = 123456789012345ULL;
  ck.params["x.weight"] = oracle::random_tensor<float>({3, 2, 3, 3}, rng);
  ck.params["x.bias"] = oracle::random_tensor<float>({3}, rng);
  ck.optimizer = AdamState{};
  ck.optimizer->t = 17;
  for (const auto& [n, t] : ck.params) {
    ck.optimizer->m[n] = oracle::random_tensor<float>(t.shape, rng);
    ck.optimizer->v[n] = oracle::random_tensor<float>(t.shape, rng, 0, 1);
  }
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.seed, ck.seed);
  EXPECT_EQ(back.params.at("x.weight").data, ck.params.at("x.weight").data);
  EXPECT_EQ(back.optimizer->v.at("x.bias").data, ck.optimizer->v.at("x.bias").data);

  auto cut = bytes;
  cut.resize(cut.size() - 4);
  EXPECT_THROW(decode_checkpoint(cut), Error);
  auto magic = bytes;
  magic[3] = 'R';
  try {
    decode_checkpoint(magic);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadMagic);
  }
}

TEST(Checkpoint, ImportVerifiesNamesAndShapes) {
  nn::ParamStore<float> store;
  store.add("a", Tensor<float>({2, 2}));
  std::map<std::string, Tensor<float>> p{{"a", Tensor<float>({2, 2}, 3.0f)}};
  import_params(store, p);
  EXPECT_EQ(store.get("a").value()[3], 3.0f);
  p["a"] = Tensor<float>({4});
  EXPECT_THROW(import_params(store, p), Error);
  p = {{"a", Tensor<float>({2, 2})}, {"b", Tensor<float>({1})}};
  EXPECT_THROW(import_params(store, p), Error);
}
