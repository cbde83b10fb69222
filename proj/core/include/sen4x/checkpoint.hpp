#pragma once

// S4XC checkpoint container (layout in docs/checkpoint.md):
//   "S4XC", u8 version, 3 zero bytes, u64 LE header length, JSON header,
//   then float32 LE parameter payloads in name order, then Adam m and v
//   payloads in the same order when optimizer state is present.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sen4x/nn.hpp"
#include "sen4x/optim.hpp"

namespace sen4x {

struct Checkpoint {
  std::string kind;         // "sr" or "lc"
  std::string config_json;  // architecture config, as emitted by the owning config's to_json()
  long long step = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor<float>> params;
  std::optional<AdamState> optimizer;
  std::string extra_json = "{}";  // free-form training bookkeeping
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a parameter store in float32.
template <typename T>
std::map<std::string, Tensor<float>> export_params(const nn::ParamStore<T>& store);

/// Copies checkpoint tensors into `store`. The name sets must match exactly
/// and every shape must agree (kShapeMismatch otherwise).
template <typename T>
void import_params(nn::ParamStore<T>& store, const std::map<std::string, Tensor<float>>& params);

}  // namespace sen4x
