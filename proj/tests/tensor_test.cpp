#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using ubert::Tensor;
using Td = Tensor<double>;

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Td({2, 3}, {1, 2, 3}), ubert::ShapeError);
  EXPECT_THROW(Td({0, 3}, {}), ubert::ShapeError);
  EXPECT_THROW(Td({}, {}), ubert::ShapeError);
  Td ok({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(ok.rows(), 2u);
  EXPECT_EQ(ok.cols(), 3u);
  EXPECT_EQ(ok(1, 2), 6.0);
  EXPECT_THROW(ok.item(), ubert::ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Td x({2, 3}, {1, -2, 3, 0.5, 7, -1}, true);
  ubert::backward(ubert::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
  Td x({3}, {1, 2, 3}, true);
  ubert::backward(ubert::sum(ubert::mul(x, x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Backward, FrozenParameterGetsNoGradient) {
  Td w({2, 2}, {1, 2, 3, 4}, false);
  Td x({1, 2}, {0.5, -1}, true);
  ubert::backward(ubert::sum(ubert::matmul(x, w)));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Backward, AccumulatesAcrossUsesAndCalls) {
  Td x({2}, {1.5, -2}, true);
  auto loss = ubert::sum(ubert::add(ubert::scale(x, 3.0), ubert::scale(x, 4.0)));
  ubert::backward(loss);
  EXPECT_EQ(x.grad()[0], 7.0);
  ubert::backward(ubert::sum(x));
  EXPECT_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, RejectsNonScalarLoss) {
  Td x({2}, {1, 2}, true);
  EXPECT_THROW(ubert::backward(ubert::scale(x, 2.0)), ubert::ShapeError);
}

TEST(Backward, RecordIsTopological) {
  std::mt19937_64 rng(3);
  auto a = testutil::random_tensor({3, 4}, rng);
  auto b = testutil::random_tensor({4, 2}, rng);
  auto h = ubert::tanh(ubert::matmul(a, b));
  auto loss = ubert::sum(ubert::add(h, ubert::sigmoid(h)));
  auto record = ubert::backward(loss);
  EXPECT_TRUE(record.is_topologically_ordered());
  EXPECT_EQ(record.nodes().back().get(), loss.node().get());
  EXPECT_EQ(record.size(), 7u);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Td x({2}, {1, 2}, true);
  Td y;
  {
    ubert::NoGradGuard guard;
    y = ubert::scale(x, 2.0);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
  auto z = ubert::scale(x, 2.0);
  EXPECT_TRUE(z.requires_grad());
}

TEST(Backward, DeepChainDoesNotOverflowStack) {
  Td x({1}, {0.1}, true);
  auto y = x;
  for (int i = 0; i < 200000; ++i) y = ubert::add(y, x);
  ubert::backward(ubert::sum(y));
  EXPECT_EQ(x.grad()[0], 200001.0);
}

TEST(GradCheck, SumIsExact) {
  std::mt19937_64 rng(1);
  auto x = testutil::random_tensor({4, 5}, rng);
  auto r = ubert::grad_check<double>([&] { return ubert::sum(x); }, {x}, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-8);
  EXPECT_EQ(r.coordinates, 20u);
}

TEST(GradCheck, DetectsWrongGradient) {
  // tanh with a deliberately wrong derivative
  Td x({3}, {0.3, -0.2, 0.9}, true);
  auto bad = [&] {
    return ubert::sum(ubert::detail::unary<double>(
        "bad_tanh", x, [](double v) { return std::tanh(v); }, [](double v, double) { return 1.0 + 0.0 * v; }));
  };
  auto r = ubert::grad_check<double>(bad, {x}, 1e-6);
  EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(GradCheck, ReportsNonFiniteCoordinate) {
  Td x({2}, {1.0, 0.0}, true);
  auto f = [&] {
    return ubert::sum(ubert::detail::unary<double>(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; }));
  };
  try {
    ubert::grad_check<double>(f, {x}, 1e-6);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
  }
}

TEST(Determinism, IdenticalInputsGiveIdenticalOutputs) {
  std::mt19937_64 r1(9), r2(9);
  auto a1 = testutil::random_tensor({5, 7}, r1), a2 = testutil::random_tensor({5, 7}, r2);
  auto f = [](const Td& a) { return ubert::row_softmax(ubert::gelu(ubert::matmul(a, ubert::Tensor<double>::filled({7, 3}, 0.1)))); };
  auto y1 = f(a1), y2 = f(a2);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1.data()[i], y2.data()[i]);
}
