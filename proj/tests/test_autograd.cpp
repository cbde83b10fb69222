#include <gtest/gtest.h>

#include "sen4x/ops.hpp"

using namespace sen4x;

TEST(Autograd, SharedSubgraphAccumulatesBothPaths) {
  Var<double> x(Tensor<double>({2}, std::vector<double>{1.5, -2.0}), true);
  const Var<double> y = ops::add(x, x);  // dy/dx = 2
  backward(ops::dot_const(ops::add(y, x), Tensor<double>({2}, 1.0)));
  EXPECT_EQ(x.grad().data, (std::vector<double>{3.0, 3.0}));
}

TEST(Autograd, LeafGradientsAccumulateAcrossCalls) {
  Var<double> x(Tensor<double>({1}, 2.0), true);
  backward(ops::scale(x, 3.0));
  backward(ops::scale(x, 3.0));
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var<double> x(Tensor<double>({1}, 2.0), true);
  Var<double> y;
  {
    NoGradGuard g;
    y = ops::scale(x, 3.0);
  }
  EXPECT_FALSE(y.requires_grad());
  backward(y);
  EXPECT_TRUE(x.grad().empty());
}

TEST(Autograd, ConstantsNeverReceiveGradient) {
  Var<double> c(Tensor<double>({2}, 1.0));
  Var<double> x(Tensor<double>({2}, 1.0), true);
  backward(ops::dot_const(ops::add(c, x), Tensor<double>({2}, 1.0)));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(x.grad().data, (std::vector<double>{1.0, 1.0}));
}

TEST(Autograd, DeepChainDoesNotOverflowTheStack) {
  Var<double> x(Tensor<double>({1}, 1.0), true);
  Var<double> y = x;
  for (int i = 0; i < 20000; ++i) y = ops::scale(y, 1.0);
  backward(y);
  EXPECT_EQ(x.grad()[0], 1.0);
}
