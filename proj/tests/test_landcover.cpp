#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <random>

#include "sen4x/error.hpp"
#include "sen4x/landcover.hpp"
#include "sen4x/model.hpp"
#include "support/oracles.hpp"

using namespace sen4x;
using namespace sen4x::landcover;

namespace {

SegConfig tiny() {
  SegConfig c;
  c.stem_width = 8;
  c.widths = {4, 8, 8, 8};
  c.fpn_dim = 8;
  return c;
}

}  // namespace

TEST(SegForward, ShapeAndEncoderScales) {
  SegNet<float> net(tiny(), 1);
  std::mt19937_64 rng(2);
  const auto img = oracle::random_tensor<float>({4, 64, 96}, rng, 0, 1);
  EXPECT_EQ(net.forward(img).shape(), (Shape{7, 64, 96}));
  const auto f = net.encode(Var<float>(img));
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(f.pyramid[i].shape()[1], 64 >> (i + 2));
    EXPECT_EQ(f.pyramid[i].shape()[2], 96 >> (i + 2));
  }
  EXPECT_THROW(net.forward(Tensor<float>({4, 48, 64})), Error);
  EXPECT_THROW(net.forward(Tensor<float>({3, 64, 64})), Error);
}

TEST(SegForward, ZeroWeightsGiveSpatiallyConstantLogits) {
  SegNet<float> net(tiny(), 3);
  for (const auto& [name, v] : net.params().all()) {
    Var<float> p = v;
    const bool cls_bias = name == "dec.classifier.bias";
    for (std::size_t i = 0; i < p.value().numel(); ++i) p.mutable_value()[i] = cls_bias ? 0.1f * i : 0.0f;
  }
  std::mt19937_64 rng(4);
  const auto logits = net.forward(oracle::random_tensor<float>({4, 32, 32}, rng)).value();
  for (int c = 0; c < 7; ++c)
    for (int i = 0; i < 32 * 32; ++i) ASSERT_EQ(logits[c * 1024 + i], 0.1f * c);
}

TEST(MaskedCe, UniformLogitsAndConfidentLimit) {
  std::vector<std::uint8_t> labels{0, 1, 2, 3, 4, 5, 6, 255, 255};
  EXPECT_NEAR(masked_ce(Var<double>(Tensor<double>({7, 3, 3})), labels).value()[0], std::log(7.0), 1e-12);
  Tensor<double> confident({7, 3, 3});
  for (int i = 0; i < 9; ++i)
    if (labels[i] != 255) confident[labels[i] * 9 + i] = 60.0;
  EXPECT_LT(masked_ce(Var<double>(confident), labels).value()[0], 1e-20);
}

TEST(MaskedCe, PermutingClassesLeavesLossUnchanged) {
  std::mt19937_64 rng(5);
  const auto logits = oracle::random_tensor<double>({7, 4, 4}, rng, -3, 3);
  std::vector<std::uint8_t> labels(16);
  for (int i = 0; i < 16; ++i) labels[i] = i % 5 == 0 ? 255 : static_cast<std::uint8_t>(i % 7);
  const std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
  Tensor<double> pl({7, 4, 4});
  std::vector<std::uint8_t> plab(16);
  for (int c = 0; c < 7; ++c)
    for (int i = 0; i < 16; ++i) pl[perm[c] * 16 + i] = logits[c * 16 + i];
  for (int i = 0; i < 16; ++i) plab[i] = labels[i] == 255 ? 255 : static_cast<std::uint8_t>(perm[labels[i]]);
  EXPECT_NEAR(masked_ce(Var<double>(logits), labels).value()[0], masked_ce(Var<double>(pl), plab).value()[0], 1e-12);
}

TEST(EarlyStop, DecreasingNeverStopsAndConstantStopsAfterPatience) {
  EarlyStopState s;
  s.patience = 25;
  for (int e = 0; e < 1000; ++e) {
    s.update(e, 1000.0 - e);
    ASSERT_FALSE(s.should_stop());
  }
  EarlyStopState c;
  c.patience = 25;
  int stopped_at = -1;
  for (int epoch = 1; epoch <= 1000; ++epoch) {
    c.update(epoch, 1.0);
    EXPECT_LE(c.epochs_since_best, c.patience);
    if (c.should_stop()) {
      stopped_at = epoch;
      break;
    }
  }
  EXPECT_EQ(stopped_at, 26);
  EXPECT_EQ(c.best_epoch, 1);
}

TEST(TrainLc, SeparableScenesAreLearnedAndBestCheckpointIsKept) {
  // one flat colour per class on random 4×4 blocks: colour is the only cue
  std::mt19937 rng(1);
  auto scene = [&] {
    LcSample s{Tensor<float>({4, 32, 32}), std::vector<std::uint8_t>(32 * 32)};
    std::uniform_int_distribution<int> cls_of(0, 6);
    for (int by = 0; by < 8; ++by)
      for (int bx = 0; bx < 8; ++bx) {
        const int cls = cls_of(rng);
        for (int y = 4 * by; y < 4 * by + 4; ++y)
          for (int x = 4 * bx; x < 4 * bx + 4; ++x) {
            s.labels[y * 32 + x] = static_cast<std::uint8_t>(cls);
            for (int b = 0; b < 4; ++b) s.image.at(b, y, x) = 0.1f + 0.12f * ((cls + b * 3) % 7);
          }
      }
    return s;
  };
  std::vector<LcSample> train;
  for (int i = 0; i < 8; ++i) train.push_back(scene());
  const std::vector<LcSample> val{scene()};
  SegConfig c = tiny();
  c.lr0 = 3e-3;
  c.batch_size = 4;
  c.max_epochs = 150;
  c.patience = 150;
  const auto r = train_lc(train, val, c);
  EXPECT_GT(r.val_scores.macro_miou, 0.75);  // chance is ~1/7
  EXPECT_LT(r.history.back().train_loss, 0.1 * r.history.front().train_loss);
  double best = 1e9;
  for (const auto& h : r.history) best = std::min(best, h.val_loss);
  EXPECT_EQ(r.stop.best_val, best);
  EXPECT_NEAR(evaluate_loss(load_segnet(r.best), val), best, 1e-5);
  EXPECT_THROW(train_lc({}, val, c), Error);
}

TEST(SegNet, ImportWidensRgbKernels) {
  SegNet<float> net(tiny(), 6);
  std::mt19937_64 rng(7);
  const auto rgb = oracle::random_tensor<float>({8, 3, 3, 3}, rng);
  EXPECT_EQ(net.import_weights({{"stem.full.weight", rgb}}), 1);
  const auto& w = net.params().get("stem.full.weight").value();
  EXPECT_EQ(w.data, expand_input_channels(rgb).data);
}
