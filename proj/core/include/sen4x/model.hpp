#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sen4x/error.hpp"
#include "sen4x/nn.hpp"

namespace sen4x {

enum class SrMode { kHybridEarly, kHybridLate, kSisrOnly, kMisrOnly };
const char* to_string(SrMode m);
SrMode parse_sr_mode(const std::string& s);

struct ModelConfig {
  SrMode mode = SrMode::kHybridEarly;
  int in_channels = 4;
  int n_views = 8;
  int embed_dim = 258;
  int n_rstb = 6;
  int heads = 6;
  int window = 8;
  int rstb_depth = 6;
  double mlp_ratio = 2.0;
  int scale = 4;
  bool anchor = true;  // add a bilinear upsampling of the best view to the output

  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
  /// Throws kConfig on violated invariants.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct FuseTrace {
  int calls = 0;
  std::vector<int> level_widths;
};

/// Balanced pairwise reduction in list order: (1,2), (3,4), … per level until
/// one item remains. Lists whose length is not a power of two are padded by
/// repeating items from the front.
template <typename V, typename PairFn>
V fuse_tree(std::vector<V> items, PairFn&& pair, FuseTrace* trace = nullptr) {
  if (items.empty()) fail(ErrorCode::kShapeMismatch, "fuse_tree: empty feature list");
  std::size_t p = 1;
  while (p < items.size()) p <<= 1;
  for (std::size_t i = 0; items.size() < p; ++i) items.push_back(items[i]);
  while (items.size() > 1) {
    std::vector<V> next;
    next.reserve(items.size() / 2);
    for (std::size_t i = 0; i < items.size(); i += 2) {
      next.push_back(pair(items[i], items[i + 1]));
      if (trace) ++trace->calls;
    }
    if (trace) trace->level_widths.push_back(static_cast<int>(next.size()));
    items = std::move(next);
  }
  return items.front();
}

/// The multi-view super-resolution network.
///
/// Forward paths by mode:
///   hybrid_early  shallow(view) for each view → fuse → deep → head
///   hybrid_late   shallow → deep for each view → fuse → head
///   sisr_only     best view only: shallow → deep → head
///   misr_only     shallow → fuse → two residual conv blocks → head
/// With `anchor` set, the bilinear ×scale upsampling of view 0 is added to
/// the head output.
template <typename T>
class SrNet {
 public:
  SrNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// `views` is N×C×h×w ordered best first; returns C×(s·h)×(s·w).
  Var<T> forward(const Tensor<T>& views) const;

  Var<T> shallow_extract(const Var<T>& view) const;
  Var<T> fuse_pair(const Var<T>& a, const Var<T>& b) const;
  Var<T> fuse_recursive(const std::vector<Var<T>>& features, FuseTrace* trace = nullptr) const;
  Var<T> deep_extract(const Var<T>& features) const;
  Var<T> upsample_head(const Var<T>& features) const;
  Tensor<T> anchor_image(const Tensor<T>& views) const;

 private:
  struct ResBlock {
    nn::Conv2d<T> conv1, conv2;
  };
  struct SwinLayer {
    nn::LayerNorm<T> norm1, norm2;
    nn::Linear<T> qkv, proj, fc1, fc2;
    Var<T> rel_bias;
  };
  struct Rstb {
    std::vector<SwinLayer> layers;
    nn::Conv2d<T> conv;
  };

  Var<T> res_block(const ResBlock& b, const Var<T>& x) const;
  Var<T> swin_layer(const SwinLayer& l, const Var<T>& tokens, int h, int w, int shift) const;

  ModelConfig cfg_;
  nn::ParamStore<T> params_;
  nn::Conv2d<T> sfe_;
  ResBlock fuse_res_;
  nn::Conv2d<T> fuse_merge_;
  std::vector<Rstb> rstbs_;
  nn::LayerNorm<T> deep_norm_;
  nn::Conv2d<T> deep_conv_;
  std::vector<ResBlock> misr_trunk_;
  std::vector<nn::Conv2d<T>> head_up_;
  nn::Conv2d<T> head_out_;
};

/// Trainable scalar counts by component, from closed-form layer arithmetic.
struct ParamBreakdown {
  std::size_t shallow = 0;   // 3×3 shallow feature extractor
  std::size_t fusion = 0;    // shared pairwise fusion block
  std::size_t backbone = 0;  // residual Swin transformer trunk
  std::size_t misr_trunk = 0;
  std::size_t head = 0;      // pixel-shuffle upsampler
  std::size_t total() const { return shallow + fusion + backbone + misr_trunk + head; }
};

ParamBreakdown count_parameters(const ModelConfig& cfg);

/// Extends a Cout×3×k×k kernel to 4 input channels; the new slice is the
/// mean of the three existing ones.
Tensor<float> expand_input_channels(const Tensor<float>& weights);

}  // namespace sen4x
