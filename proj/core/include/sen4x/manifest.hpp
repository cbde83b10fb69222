#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sen4x {

enum class Split { kTrain, kVal, kTest, kUnassigned };
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct RevisitRef {
  std::string id;
  double score = 0;
};

struct TileRecord {
  std::string tile_id;
  int geo_block = 0;
  Split split = Split::kUnassigned;
  std::vector<RevisitRef> revisits;              // selection order, best first
  std::map<std::string, std::string> files;      // role -> path relative to the manifest
  std::string source_tile;                       // empty for whole tiles
  std::optional<std::array<int, 2>> origin;      // LR (row, col) of a patch within its tile
};

/// Persistent state of the data pipeline. Serialized as UTF-8 JSON with
/// top-level keys {tiles, seed, created, version}.
struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::string created;
  std::vector<TileRecord> tiles;

  std::vector<const TileRecord*> split(Split s) const;
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
/// With `check_files`, every referenced file must exist (relative paths are
/// resolved against the manifest's directory).
DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files = true);

struct SplitFractions {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

/// Number of geo blocks per split (train, val, test): largest-remainder
/// apportionment with at least one block per split.
std::array<int, 3> apportion_blocks(int n_blocks, const SplitFractions& f);

/// Assigns whole geo blocks to splits. The test split is the contiguous run
/// of highest block ids; validation blocks are drawn from the remainder with
/// a generator seeded by `seed`. Throws kData with fewer than 3 blocks.
DatasetManifest split_dataset(std::vector<TileRecord> tiles, const SplitFractions& fractions, std::uint64_t seed,
                              std::string created);

}  // namespace sen4x
