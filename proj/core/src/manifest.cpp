#include "sen4x/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sen4x/error.hpp"

namespace sen4x {

using json = nlohmann::json;

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "unassigned") return Split::kUnassigned;
  fail(ErrorCode::kData, "unknown split '" + s + "'");
}

std::vector<const TileRecord*> DatasetManifest::split(Split s) const {
  std::vector<const TileRecord*> out;
  for (const auto& t : tiles)
    if (t.split == s) out.push_back(&t);
  return out;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json tiles = json::array();
  for (const auto& t : m.tiles) {
    json jt;
    jt["tile_id"] = t.tile_id;
    jt["geo_block"] = t.geo_block;
    jt["split"] = to_string(t.split);
    json revs = json::array();
    for (const auto& r : t.revisits) revs.push_back({{"id", r.id}, {"score", r.score}});
    jt["revisits"] = revs;
    jt["files"] = t.files;
    if (!t.source_tile.empty()) jt["source_tile"] = t.source_tile;
    if (t.origin) jt["origin"] = {(*t.origin)[0], (*t.origin)[1]};
    tiles.push_back(std::move(jt));
  }
  json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["created"] = m.created;
  j["tiles"] = std::move(tiles);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created = j.at("created").get<std::string>();
    for (const auto& jt : j.at("tiles")) {
      TileRecord t;
      t.tile_id = jt.at("tile_id").get<std::string>();
      t.geo_block = jt.at("geo_block").get<int>();
      t.split = parse_split(jt.at("split").get<std::string>());
      for (const auto& r : jt.at("revisits")) t.revisits.push_back({r.at("id").get<std::string>(), r.at("score").get<double>()});
      t.files = jt.at("files").get<std::map<std::string, std::string>>();
      if (jt.contains("source_tile")) t.source_tile = jt["source_tile"].get<std::string>();
      if (jt.contains("origin")) t.origin = std::array<int, 2>{jt["origin"][0].get<int>(), jt["origin"][1].get<int>()};
      m.tiles.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kData, std::string("malformed dataset manifest: ") + e.what());
  }
  if (m.version != 1) fail(ErrorCode::kData, "unsupported manifest version " + std::to_string(m.version));
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << manifest_to_json(m);
}

DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kData, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  DatasetManifest m = manifest_from_json(ss.str());
  if (check_files) {
    const auto base = path.parent_path();
    for (const auto& t : m.tiles)
      for (const auto& [role, file] : t.files)
        if (!std::filesystem::exists(base / file))
          fail(ErrorCode::kData, "manifest references missing file " + (base / file).string() + " (" + t.tile_id + ")");
  }
  return m;
}

std::array<int, 3> apportion_blocks(int n_blocks, const SplitFractions& f) {
  if (n_blocks < 3) fail(ErrorCode::kData, "need at least 3 geo blocks to form train/val/test, got " + std::to_string(n_blocks));
  const double total = f.train + f.val + f.test;
  if (total <= 0 || f.train < 0 || f.val < 0 || f.test < 0) fail(ErrorCode::kConfig, "invalid split fractions");
  const double ideal[3] = {f.train / total * n_blocks, f.val / total * n_blocks, f.test / total * n_blocks};
  std::array<int, 3> count{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) assigned += count[i] = static_cast<int>(std::floor(ideal[i]));
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return ideal[a] - count[a] > ideal[b] - count[b]; });
  for (int i = 0; assigned < n_blocks; i = (i + 1) % 3, ++assigned) ++count[order[i]];
  for (int i = 0; i < 3; ++i) {
    while (count[i] < 1) {
      const int donor = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
      --count[donor];
      ++count[i];
    }
  }
  return count;
}

DatasetManifest split_dataset(std::vector<TileRecord> tiles, const SplitFractions& fractions, std::uint64_t seed,
                              std::string created) {
  std::set<int> block_set;
  for (const auto& t : tiles) block_set.insert(t.geo_block);
  const std::vector<int> blocks(block_set.begin(), block_set.end());
  const auto [n_train, n_val, n_test] = apportion_blocks(static_cast<int>(blocks.size()), fractions);
  (void)n_train;

  std::map<int, Split> assign;
  const std::size_t first_test = blocks.size() - static_cast<std::size_t>(n_test);
  for (std::size_t i = first_test; i < blocks.size(); ++i) assign[blocks[i]] = Split::kTest;
  std::vector<int> rest(blocks.begin(), blocks.begin() + static_cast<std::ptrdiff_t>(first_test));
  std::mt19937_64 rng(seed);
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t i = 0; i < rest.size(); ++i) assign[rest[i]] = i < static_cast<std::size_t>(n_val) ? Split::kVal : Split::kTrain;

  DatasetManifest m;
  m.seed = seed;
  m.created = std::move(created);
  for (auto& t : tiles) t.split = assign.at(t.geo_block);
  m.tiles = std::move(tiles);
  return m;
}

}  // namespace sen4x
