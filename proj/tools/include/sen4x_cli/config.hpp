#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sen4x/landcover.hpp"
#include "sen4x/model.hpp"
#include "sen4x/pipeline.hpp"
#include "sen4x/synthdata.hpp"
#include "sen4x/train.hpp"

namespace sen4x::cli {

/// Key groups; each command accepts the keys of the groups it uses.
enum Group : unsigned {
  kCommon = 1u << 0,
  kModel = 1u << 1,
  kTrain = 1u << 2,
  kLc = 1u << 3,
  kPrepare = 1u << 4,
  kSynth = 1u << 5,
};

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
  unsigned group;
};

/// Every documented configuration key with its default.
const std::vector<KeySpec>& schema();

/// Resolved key → value text for one command.
class Config {
 public:
  explicit Config(unsigned groups);

  unsigned groups() const { return groups_; }
  bool accepts(const std::string& key) const;
  /// Throws kConfig naming the key when it is not accepted here.
  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;

  /// "key = value" lines in key order; loading this text reproduces the config.
  std::string to_text() const;
  /// 64-bit FNV-1a of to_text(), hex.
  std::string hash() const;

  ModelConfig model() const;
  train::TrainConfig train() const;
  landcover::SegConfig lc() const;
  pipeline::PrepareConfig prepare() const;
  synth::DatasetSpec synth() const;
  synth::RawSpec raw() const;

 private:
  unsigned groups_;
  std::map<std::string, std::string> values_;
};

/// Parses "key = value" lines ('#' starts a comment, blank lines ignored)
/// into `cfg`. Keys outside the schema and malformed lines throw kConfig;
/// schema keys the command does not use are skipped.
void apply_config_text(Config& cfg, const std::string& text, const std::string& origin = "config");
void load_config(Config& cfg, const std::filesystem::path& path);

}  // namespace sen4x::cli
