#include "sen4x/model.hpp"

#include <algorithm>

#include <json.hpp>

#include "sen4x/resample.hpp"

namespace sen4x {

using json = nlohmann::json;

const char* to_string(SrMode m) {
  switch (m) {
    case SrMode::kHybridEarly: return "hybrid_early";
    case SrMode::kHybridLate: return "hybrid_late";
    case SrMode::kSisrOnly: return "sisr_only";
    case SrMode::kMisrOnly: return "misr_only";
  }
  return "hybrid_early";
}

SrMode parse_sr_mode(const std::string& s) {
  if (s == "hybrid_early") return SrMode::kHybridEarly;
  if (s == "hybrid_late") return SrMode::kHybridLate;
  if (s == "sisr_only") return SrMode::kSisrOnly;
  if (s == "misr_only") return SrMode::kMisrOnly;
  fail(ErrorCode::kConfig, "unknown model mode '" + s + "'");
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfig, "model config: " + what);
  };
  check(in_channels > 0, "in_channels must be positive");
  check(n_views > 0, "n_views must be positive");
  check(embed_dim > 0 && heads > 0, "embed_dim and heads must be positive");
  check(embed_dim % heads == 0, "embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                                    std::to_string(heads));
  check(window > 0, "window must be positive");
  check(n_rstb >= 0 && rstb_depth > 0, "n_rstb >= 0 and rstb_depth > 0 required");
  check(mlp_ratio > 0 && mlp_hidden() > 0, "mlp_ratio must be positive");
  check(scale >= 2 && (scale & (scale - 1)) == 0, "scale must be a power of two >= 2");
}

std::string ModelConfig::to_json() const {
  json j{{"mode", to_string(mode)}, {"in_channels", in_channels}, {"n_views", n_views},   {"embed_dim", embed_dim},
         {"n_rstb", n_rstb},       {"heads", heads},             {"window", window},     {"rstb_depth", rstb_depth},
         {"mlp_ratio", mlp_ratio}, {"scale", scale},             {"anchor", anchor}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.mode = parse_sr_mode(j.at("mode").get<std::string>());
    c.in_channels = j.at("in_channels");
    c.n_views = j.at("n_views");
    c.embed_dim = j.at("embed_dim");
    c.n_rstb = j.at("n_rstb");
    c.heads = j.at("heads");
    c.window = j.at("window");
    c.rstb_depth = j.at("rstb_depth");
    c.mlp_ratio = j.at("mlp_ratio");
    c.scale = j.at("scale");
    c.anchor = j.at("anchor");
  } catch (const json::exception& e) {
    fail(ErrorCode::kData, std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

bool uses_fusion(SrMode m) { return m != SrMode::kSisrOnly; }
bool uses_backbone(SrMode m) { return m != SrMode::kMisrOnly; }

int head_stages(int scale) {
  int n = 0;
  while ((1 << n) < scale) ++n;
  return n;
}

}  // namespace

template <typename T>
SrNet<T>::SrNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Initializer init(seed);
  const int e = cfg_.embed_dim;
  sfe_ = nn::make_conv(params_, init, "sfe", cfg_.in_channels, e, 3);
  if (uses_fusion(cfg_.mode)) {
    fuse_res_.conv1 = nn::make_conv(params_, init, "fusion.res.conv1", e, e, 3);
    fuse_res_.conv2 = nn::make_conv(params_, init, "fusion.res.conv2", e, e, 3, 1, nn::Init::kZero);
    fuse_merge_ = nn::make_conv(params_, init, "fusion.merge", 2 * e, e, 3, 1, nn::Init::kZero);
  }
  if (uses_backbone(cfg_.mode)) {
    const int span = 2 * cfg_.window - 1;
    for (int r = 0; r < cfg_.n_rstb; ++r) {
      Rstb block;
      const std::string rp = "deep.rstb" + std::to_string(r);
      for (int d = 0; d < cfg_.rstb_depth; ++d) {
        const std::string lp = rp + ".layer" + std::to_string(d);
        SwinLayer l;
        l.norm1 = nn::make_layer_norm(params_, lp + ".norm1", e);
        l.qkv = nn::make_linear(params_, init, lp + ".attn.qkv", e, 3 * e);
        l.rel_bias = params_.add(lp + ".attn.rel_bias", init.trunc_normal<T>({span * span, cfg_.heads}, 0.02));
        l.proj = nn::make_linear(params_, init, lp + ".attn.proj", e, e);
        l.norm2 = nn::make_layer_norm(params_, lp + ".norm2", e);
        l.fc1 = nn::make_linear(params_, init, lp + ".mlp.fc1", e, cfg_.mlp_hidden());
        l.fc2 = nn::make_linear(params_, init, lp + ".mlp.fc2", cfg_.mlp_hidden(), e);
        block.layers.push_back(std::move(l));
      }
      block.conv = nn::make_conv(params_, init, rp + ".conv", e, e, 3, 1, nn::Init::kZero);
      rstbs_.push_back(std::move(block));
    }
    deep_norm_ = nn::make_layer_norm(params_, "deep.norm", e);
    deep_conv_ = nn::make_conv(params_, init, "deep.conv_after", e, e, 3);
  } else {
    for (int b = 0; b < 2; ++b) {
      const std::string bp = "misr_trunk.block" + std::to_string(b);
      ResBlock rb;
      rb.conv1 = nn::make_conv(params_, init, bp + ".conv1", e, e, 3);
      rb.conv2 = nn::make_conv(params_, init, bp + ".conv2", e, e, 3, 1, nn::Init::kZero);
      misr_trunk_.push_back(rb);
    }
  }
  for (int s = 0; s < head_stages(cfg_.scale); ++s)
    head_up_.push_back(nn::make_conv(params_, init, "head.up" + std::to_string(s), e, 4 * e, 3));
  head_out_ = nn::make_conv(params_, init, "head.out", e, cfg_.in_channels, 3);
}

template <typename T>
Var<T> SrNet<T>::res_block(const ResBlock& b, const Var<T>& x) const {
  return ops::add(x, b.conv2(ops::gelu(b.conv1(x))));
}

template <typename T>
Var<T> SrNet<T>::shallow_extract(const Var<T>& view) const {
  if (view.shape().size() != 3 || view.shape()[0] != cfg_.in_channels)
    fail(ErrorCode::kShapeMismatch, "shallow_extract: expected " + std::to_string(cfg_.in_channels) +
                                        " input channels, got " + shape_str(view.shape()));
  return sfe_(view);
}

template <typename T>
Var<T> SrNet<T>::fuse_pair(const Var<T>& a, const Var<T>& b) const {
  if (!uses_fusion(cfg_.mode)) fail(ErrorCode::kConfig, "fuse_pair: mode has no fusion block");
  if (a.shape() != b.shape()) fail(ErrorCode::kShapeMismatch, "fuse_pair: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Var<T> ua = res_block(fuse_res_, a);
  const Var<T> ub = res_block(fuse_res_, b);
  const Var<T> merged = fuse_merge_(ops::concat_channels<T>({ua, ub}));
  return ops::add(merged, ops::lincomb(ua, T(0.5), ub, T(0.5)));
}

template <typename T>
Var<T> SrNet<T>::fuse_recursive(const std::vector<Var<T>>& features, FuseTrace* trace) const {
  return fuse_tree(features, [this](const Var<T>& a, const Var<T>& b) { return fuse_pair(a, b); }, trace);
}

template <typename T>
Var<T> SrNet<T>::swin_layer(const SwinLayer& l, const Var<T>& tokens, int h, int w, int shift) const {
  ops::WindowSpec spec{h, w, cfg_.window, shift, cfg_.heads};
  const Var<T> attn = l.proj(ops::window_attention(l.qkv(l.norm1(tokens)), l.rel_bias, spec));
  const Var<T> x = ops::add(tokens, attn);
  return ops::add(x, l.fc2(ops::gelu(l.fc1(l.norm2(x)))));
}

template <typename T>
Var<T> SrNet<T>::deep_extract(const Var<T>& features) const {
  if (!uses_backbone(cfg_.mode)) fail(ErrorCode::kConfig, "deep_extract: mode has no transformer backbone");
  const int h = features.shape()[1], w = features.shape()[2];
  if (h % cfg_.window || w % cfg_.window)
    fail(ErrorCode::kShapeMismatch, "deep_extract: feature map " + std::to_string(h) + "x" + std::to_string(w) +
                                        " not divisible by window " + std::to_string(cfg_.window));
  // shifting is pointless when one window spans the whole map
  const int shift_size = std::min(h, w) > cfg_.window ? cfg_.window / 2 : 0;
  Var<T> feat = features;
  for (const Rstb& block : rstbs_) {
    Var<T> tokens = ops::to_tokens(feat);
    for (std::size_t d = 0; d < block.layers.size(); ++d)
      tokens = swin_layer(block.layers[d], tokens, h, w, (d % 2 == 1) ? shift_size : 0);
    feat = ops::add(feat, block.conv(ops::from_tokens(tokens, h, w)));
  }
  const Var<T> normed = ops::from_tokens(deep_norm_(ops::to_tokens(feat)), h, w);
  return ops::add(features, deep_conv_(normed));
}

template <typename T>
Var<T> SrNet<T>::upsample_head(const Var<T>& features) const {
  Var<T> x = features;
  for (const auto& up : head_up_) x = ops::pixel_shuffle(up(x), 2);
  return head_out_(x);
}

template <typename T>
Tensor<T> SrNet<T>::anchor_image(const Tensor<T>& views) const {
  const Tensor<float> best = views.slice0(0).template cast<float>();
  return resize_bilinear(best, best.dim(1) * cfg_.scale, best.dim(2) * cfg_.scale).template cast<T>();
}

template <typename T>
Var<T> SrNet<T>::forward(const Tensor<T>& views) const {
  if (views.ndim() != 4 || views.dim(1) != cfg_.in_channels)
    fail(ErrorCode::kShapeMismatch, "forward: expected N×" + std::to_string(cfg_.in_channels) + "×h×w views, got " +
                                        shape_str(views.shape));
  const int n = views.dim(0);
  if (cfg_.mode == SrMode::kSisrOnly ? n < 1 : n != cfg_.n_views)
    fail(ErrorCode::kShapeMismatch, std::string("forward: mode ") + to_string(cfg_.mode) + " expects " +
                                        std::to_string(cfg_.n_views) + " views, got " + std::to_string(n));
  Var<T> fused;
  switch (cfg_.mode) {
    case SrMode::kSisrOnly:
      fused = deep_extract(shallow_extract(Var<T>(views.slice0(0))));
      break;
    case SrMode::kHybridEarly: {
      std::vector<Var<T>> feats;
      for (int v = 0; v < n; ++v) feats.push_back(shallow_extract(Var<T>(views.slice0(v))));
      fused = deep_extract(fuse_recursive(feats));
      break;
    }
    case SrMode::kHybridLate: {
      std::vector<Var<T>> feats;
      for (int v = 0; v < n; ++v) feats.push_back(deep_extract(shallow_extract(Var<T>(views.slice0(v)))));
      fused = fuse_recursive(feats);
      break;
    }
    case SrMode::kMisrOnly: {
      std::vector<Var<T>> feats;
      for (int v = 0; v < n; ++v) feats.push_back(shallow_extract(Var<T>(views.slice0(v))));
      fused = fuse_recursive(feats);
      for (const auto& rb : misr_trunk_) fused = res_block(rb, fused);
      break;
    }
  }
  Var<T> out = upsample_head(fused);
  if (cfg_.anchor) out = ops::add_const(out, anchor_image(views));
  return out;
}

ParamBreakdown count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  using nn::conv_params;
  using nn::linear_params;
  const int e = cfg.embed_dim;
  ParamBreakdown b;
  b.shallow = conv_params(cfg.in_channels, e, 3);
  if (uses_fusion(cfg.mode)) b.fusion = 2 * conv_params(e, e, 3) + conv_params(2 * e, e, 3);
  if (uses_backbone(cfg.mode)) {
    const std::size_t span = 2 * cfg.window - 1;
    const std::size_t layer = 2 * 2 * e                        // two layer norms
                              + linear_params(e, 3 * e)        // qkv
                              + span * span * cfg.heads        // relative position bias
                              + linear_params(e, e)            // output projection
                              + linear_params(e, cfg.mlp_hidden()) + linear_params(cfg.mlp_hidden(), e);
    const std::size_t rstb = cfg.rstb_depth * layer + conv_params(e, e, 3);
    b.backbone = cfg.n_rstb * rstb + 2 * e + conv_params(e, e, 3);
  } else {
    b.misr_trunk = 2 * 2 * conv_params(e, e, 3);
  }
  b.head = head_stages(cfg.scale) * conv_params(e, 4 * e, 3) + conv_params(e, cfg.in_channels, 3);
  return b;
}

Tensor<float> expand_input_channels(const Tensor<float>& weights) {
  if (weights.ndim() != 4 || weights.dim(1) != 3)
    fail(ErrorCode::kShapeMismatch, "expand_input_channels: expected Cout×3×k×k, got " + shape_str(weights.shape));
  const int cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  const std::size_t tap = static_cast<std::size_t>(kh) * kw;
  Tensor<float> out({cout, 4, kh, kw});
  for (int o = 0; o < cout; ++o) {
    const float* src = weights.ptr() + static_cast<std::size_t>(o) * 3 * tap;
    float* dst = out.ptr() + static_cast<std::size_t>(o) * 4 * tap;
    std::copy(src, src + 3 * tap, dst);
    for (std::size_t i = 0; i < tap; ++i) dst[3 * tap + i] = (src[i] + src[tap + i] + src[2 * tap + i]) / 3.0f;
  }
  return out;
}

template class SrNet<float>;
template class SrNet<double>;

}  // namespace sen4x
