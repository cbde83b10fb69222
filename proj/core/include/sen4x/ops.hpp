#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sen4x/autograd.hpp"

namespace sen4x::ops {

// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// alpha·a + beta·b
template <typename T>
Var<T> lincomb(const Var<T>& a, T alpha, const Var<T>& b, T beta);

template <typename T>
Var<T> scale(const Var<T>& a, T alpha);

/// a + c where c carries no gradient (e.g. an interpolated anchor image).
template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c);

/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a);

// Image ops, C×H×W

/// 2-D convolution. `w` is Cout×Cin×k×k; `b` (Cout) may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = -1);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs);

/// out[c, y·s+dy, x·s+dx] = in[c·s² + dy·s + dx, y, x]
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int s);

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int s);

// Token ops, L×C

/// C×H×W → (H·W)×C
template <typename T>
Var<T> to_tokens(const Var<T>& x);

/// (H·W)×C → C×H×W
template <typename T>
Var<T> from_tokens(const Var<T>& x, int h, int w);

/// x·Wᵀ + b with `w` out×in.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

struct WindowSpec {
  int height = 0;
  int width = 0;
  int window = 0;
  int shift = 0;
  int heads = 1;
};

/// Windowed multi-head self-attention over a token grid.
///
/// `qkv` is L×3C with [q | k | v] per row, tokens in row-major (y·W + x)
/// order. `rel_bias` is (2w−1)²×heads. With shift > 0 the grid is cyclically
/// rolled by −shift before partitioning and pairs originating from
/// different regions of the rolled grid are excluded from the softmax.
/// Returns L×C.
template <typename T>
Var<T> window_attention(const Var<T>& qkv, const Var<T>& rel_bias, const WindowSpec& spec);

/// Same as window_attention, also returning the softmax weights laid out
/// [window][head][i][j] (for inspection in tests).
template <typename T>
Var<T> window_attention(const Var<T>& qkv, const Var<T>& rel_bias, const WindowSpec& spec,
                        std::vector<T>* probs_out);

/// Region id of each rolled-grid position used for shifted-window masking.
std::vector<int> shift_region_ids(int height, int width, int window, int shift);

// Losses and reductions (scalar results, shape {1})

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target);

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target);

/// Σ x·c
template <typename T>
Var<T> dot_const(const Var<T>& x, const Tensor<T>& c);

/// Mean over pixels whose label is not `ignore` of −log softmax(logits)[label].
/// `logits` is K×H×W, `labels` H·W.
template <typename T>
Var<T> masked_cross_entropy(const Var<T>& logits, std::span<const std::uint8_t> labels,
                            std::uint8_t ignore = 255);

}  // namespace sen4x::ops
