#include <benchmark/benchmark.h>

#include <random>

#include "sen4x/autograd.hpp"
#include "sen4x/model.hpp"
#include "sen4x/ops.hpp"

using namespace sen4x;
using namespace sen4x::ops;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, 0.5f);
  for (auto& v : t.data) v = nd(rng);
  return t;
}

// 3×3 convolution C→C on a side×side map, forward only and forward+backward.
void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const bool grad = state.range(2) != 0;
  Var<float> x(random_tensor({c, side, side}, 1), grad);
  Var<float> w(random_tensor({c, c, 3, 3}, 2), grad);
  Var<float> b(random_tensor({c}, 3), grad);
  for (auto _ : state) {
    auto y = conv2d(x, w, b);
    if (grad) backward(y, Tensor<float>(y.value().shape, 1.0f));
    benchmark::DoNotOptimize(y.value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c) * c * 9 * side * side);
}
BENCHMARK(BM_Conv3x3)->Args({32, 16, 0})->Args({32, 64, 0})->Args({64, 64, 0})->Args({32, 64, 1})->Unit(benchmark::kMicrosecond);

void BM_WindowAttention(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const int window = static_cast<int>(state.range(2)), heads = 2;
  const bool grad = state.range(3) != 0;
  Var<float> qkv(random_tensor({side * side, 3 * c}, 4), grad);
  Var<float> bias(random_tensor({(2 * window - 1) * (2 * window - 1), heads}, 5), grad);
  const WindowSpec spec{side, side, window, window / 2, heads};
  for (auto _ : state) {
    auto y = window_attention(qkv, bias, spec);
    if (grad) backward(y, Tensor<float>(y.value().shape, 1.0f));
    benchmark::DoNotOptimize(y.value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_WindowAttention)->Args({32, 16, 4, 0})->Args({32, 64, 8, 0})->Args({32, 16, 4, 1})->Unit(benchmark::kMicrosecond);

// Full network forward on one revisit stack (tiny acceptance config).
void BM_SrForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.n_rstb = 2;
  cfg.rstb_depth = 2;
  cfg.heads = 2;
  cfg.window = 4;
  cfg.mode = state.range(0) ? SrMode::kHybridEarly : SrMode::kSisrOnly;
  const int side = static_cast<int>(state.range(1));
  SrNet<float> net(cfg, 0);
  const Tensor<float> views = random_tensor({cfg.n_views, cfg.in_channels, side, side}, 6);
  for (auto _ : state) {
    auto y = net.forward(views);
    benchmark::DoNotOptimize(y.value().data.data());
  }
}
BENCHMARK(BM_SrForward)->Args({1, 16})->Args({0, 16})->Args({1, 32})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
