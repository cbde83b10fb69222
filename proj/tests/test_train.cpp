#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "sen4x/error.hpp"
#include "sen4x/train.hpp"
#include "support/oracles.hpp"

using namespace sen4x;
using namespace sen4x::train;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.embed_dim = 8;
  c.n_rstb = 1;
  c.rstb_depth = 2;
  c.heads = 2;
  c.window = 4;
  c.n_views = 2;
  return c;
}

std::vector<SrSample> random_samples(int n, std::uint64_t seed, int side = 8) {
  std::mt19937_64 rng(seed);
  std::vector<SrSample> out;
  for (int i = 0; i < n; ++i) {
    SrSample s;
    s.id = "s" + std::to_string(i);
    s.views = oracle::random_tensor<float>({2, 4, side, side}, rng, 0, 1);
    s.target = oracle::random_tensor<float>({4, 4 * side, 4 * side}, rng, 0, 1);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Schedule, ClosedFormPoints) {
  TrainConfig c;
  c.lr0 = 1e-4;
  c.lr_min = 1e-8;
  const long long T = 400, W = warmup_steps(T, c);
  EXPECT_EQ(W, 20);
  EXPECT_EQ(lr_at(W - 1, T, c), c.lr0);
  EXPECT_EQ(lr_at(W, T, c), c.lr0);  // continuous at the seam
  EXPECT_EQ(lr_at(T, T, c), c.lr_min);
  EXPECT_NEAR(lr_at(W + (T - W) / 2, T, c), (c.lr0 + c.lr_min) / 2, 1e-20);
  EXPECT_EQ(lr_at(0, T, c), c.lr0 / 20);
  for (long long t = 1; t <= T; ++t) {
    if (t < W) {
      EXPECT_GT(lr_at(t, T, c), lr_at(t - 1, T, c));
    } else {
      EXPECT_LE(lr_at(t, T, c), lr_at(t - 1, T, c));
    }
  }
  EXPECT_THROW(lr_at(0, 0, c), Error);
  EXPECT_EQ(warmup_steps(7, c), 1);
}

TEST(SrLoss, ZeroOnesAndOracle) {
  Tensor<float> zeros({2, 3, 3}), ones({2, 3, 3}, 1.0f);
  EXPECT_EQ(sr_loss(Var<float>(ones), ones, LossKind::kL1).value()[0], 0.0f);
  EXPECT_EQ(sr_loss(Var<float>(zeros), ones, LossKind::kL1).value()[0], 1.0f);
  EXPECT_EQ(sr_loss(Var<float>(zeros), ones, LossKind::kL2).value()[0], 1.0f);
  std::mt19937_64 rng(1);
  auto p = oracle::random_tensor<double>({3, 7, 5}, rng), t = oracle::random_tensor<double>({3, 7, 5}, rng);
  double l1 = 0, l2 = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 35; ++i) {
      const double d = p[c * 35 + i] - t[c * 35 + i];
      l1 += std::abs(d);
      l2 += d * d;
    }
  EXPECT_NEAR(sr_loss(Var<double>(p), t, LossKind::kL1).value()[0], l1 / 105, 1e-12);
  EXPECT_NEAR(sr_loss(Var<double>(p), t, LossKind::kL2).value()[0], l2 / 105, 1e-12);
  EXPECT_THROW(sr_loss(Var<float>(zeros), Tensor<float>({2, 3, 4}), LossKind::kL1), Error);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  nn::ParamStore<float> store;
  Var<float> p = store.add("w", Tensor<float>({3}, std::vector<float>{1, -2, 3}));
  Adam<float> opt(store);
  p.mutable_grad();  // allocated, all zero
  for (int i = 0; i < 5; ++i) opt.step(0.1);
  EXPECT_EQ(p.value().data, (std::vector<float>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLrAgainstTheGradientSign) {
  nn::ParamStore<double> store;
  Var<double> p = store.add("w", Tensor<double>({2}, std::vector<double>{1, 1}));
  Adam<double> opt(store);
  p.mutable_grad()[0] = 4.0;
  p.mutable_grad()[1] = -0.5;
  opt.step(0.01);
  EXPECT_NEAR(p.value()[0], 0.99, 1e-9);
  EXPECT_NEAR(p.value()[1], 1.01, 1e-9);
}

TEST(BatchIndices, StatelessAndCoveringEachEpoch) {
  EXPECT_EQ(batch_indices(3, 5, 4, 8, 20), batch_indices(3, 5, 4, 8, 20));
  std::vector<int> seen(32, 0);
  for (int b = 0; b < 4; ++b)
    for (auto i : batch_indices(3, 8 + b, 4, 8, 32)) ++seen[i];
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_NE(batch_indices(3, 0, 4, 8, 32), batch_indices(3, 4, 4, 8, 32));
  EXPECT_EQ(batch_indices(3, 0, 4, 3, 1), (std::vector<std::size_t>{0, 0, 0}));
}

TEST(Trainer, LoggedLearningRateFollowsTheSchedule) {
  const auto data = random_samples(3, 2);
  TrainConfig c;
  c.epochs = 3;
  c.batches_per_epoch = 2;
  c.batch_size = 2;
  SrTrainer tr(tiny(), c);
  TrainLog log;
  tr.run(6, data, &log);
  ASSERT_EQ(log.steps.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(log.steps[i].step, static_cast<long long>(i));
    EXPECT_EQ(log.steps[i].lr, lr_at(static_cast<long long>(i), 6, c));
  }
}

TEST(Trainer, VanishingLearningRateKeepsLossConstant) {
  const auto data = random_samples(1, 3);
  TrainConfig c;
  c.lr0 = 1e-30;
  c.lr_min = 0;
  c.epochs = 4;
  c.batches_per_epoch = 1;
  c.batch_size = 1;
  SrTrainer tr(tiny(), c);
  TrainLog log;
  tr.run(4, data, &log);
  for (const auto& s : log.steps) EXPECT_EQ(s.loss, log.steps[0].loss);
}

TEST(Trainer, OverfitsASinglePatch) {
  auto data = random_samples(1, 4);
  // a learnable target: smooth, so the tiny net can fit it quickly
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) data[0].target.at(c, y, x) = 0.5f + 0.3f * std::sin(0.3f * x + c) * std::cos(0.2f * y);
  TrainConfig c;
  c.lr0 = 2e-3;
  c.epochs = 200;
  c.batches_per_epoch = 1;
  c.batch_size = 1;
  c.seed = 5;
  SrTrainer tr(tiny(), c);
  TrainLog log;
  tr.run(200, data, &log);
  EXPECT_LT(log.steps.back().loss, 0.1 * log.steps.front().loss)
      << log.steps.front().loss << " -> " << log.steps.back().loss;
}

TEST(Trainer, SameSeedGivesIdenticalLossBits) {
  const auto data = random_samples(4, 6);
  TrainConfig c;
  c.epochs = 2;
  c.batches_per_epoch = 2;
  c.batch_size = 2;
  c.seed = 9;
  auto run = [&] {
    SrTrainer tr(tiny(), c);
    TrainLog log;
    tr.run(4, data, &log);
    return log.steps.back().loss;
  };
  const double a = run(), b = run();
  EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
}

TEST(Trainer, ResumeFromCheckpointIsBitIdentical) {
  const auto data = random_samples(5, 7);
  TrainConfig c;
  c.epochs = 5;
  c.batches_per_epoch = 2;
  c.batch_size = 2;
  c.seed = 11;
  c.lr0 = 1e-3;
  SrTrainer straight(tiny(), c);
  straight.run(10, data);

  SrTrainer first(tiny(), c);
  first.run(5, data);
  const auto bytes = encode_checkpoint(first.checkpoint());
  SrTrainer second(tiny(), c);
  second.restore(decode_checkpoint(bytes));
  second.run(10, data);
  EXPECT_EQ(second.step(), 10);
  for (const auto& [name, v] : straight.net().params().all())
    EXPECT_EQ(second.net().params().get(name).value().data, v.value().data) << name;
}

TEST(Trainer, NonFiniteLossAbortsWithStepIndex) {
  auto data = random_samples(1, 8);
  data[0].target[0] = std::nanf("");
  TrainConfig c;
  c.epochs = 2;
  c.batches_per_epoch = 1;
  c.batch_size = 1;
  SrTrainer tr(tiny(), c);
  try {
    tr.run(2, data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(TrainSr, EmptySplitsAreRejectedAndBestCheckpointIsKept) {
  const auto data = random_samples(2, 9);
  TrainConfig c;
  c.epochs = 2;
  c.batches_per_epoch = 1;
  c.batch_size = 1;
  EXPECT_THROW(train_sr({}, data, tiny(), c), Error);
  EXPECT_THROW(train_sr(data, {}, tiny(), c), Error);
  const auto r = train_sr(data, data, tiny(), c);
  EXPECT_EQ(r.log.epochs.size(), 2u);
  EXPECT_FALSE(r.best.params.empty());
  EXPECT_TRUE(r.last.optimizer.has_value());
  EXPECT_FALSE(r.best.optimizer.has_value());
}

TEST(GradCheck, LinearConvModelIsExact) {
  nn::ParamStore<double> store;
  nn::Initializer init(1);
  const auto conv = nn::make_conv(store, init, "c", 3, 2, 3);
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor<double>({3, 6, 6}, rng);
  const auto r = oracle::random_tensor<double>({2, 6, 6}, rng);
  const auto rep = grad_check(store, [&] { return ops::dot_const(conv(Var<double>(x)), r); }, 40, 1e-3, 3);
  EXPECT_LT(rep.max_rel_error(), 1e-6);
  EXPECT_THROW(grad_check(store, [&] { return ops::dot_const(conv(Var<double>(x)), r); }, 5, 0.0, 3), Error);
}

TEST(GradCheck, TinyHybridEarlyNetwork) {
  ModelConfig c = tiny();
  c.n_views = 4;
  const auto rep = grad_check(c, 50, 1e-3, 7, 8);
  EXPECT_GE(rep.fraction_below(1e-2), 0.99) << "max " << rep.max_rel_error();
}
