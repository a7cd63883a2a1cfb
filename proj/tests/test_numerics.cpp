#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tcd/numerics.hpp"
#include "test_util.hpp"

using namespace tcd;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Linear, IdentityAndSum) {
  Tensor y = linear_forward(Tensor::vector({1, 2}), Tensor::matrix({{1, 0}, {0, 1}}),
                            Tensor::vector({0, 0}));
  EXPECT_EQ(y, Tensor::vector({1, 2}));
  y = linear_forward(Tensor::vector({1, 1}), Tensor::matrix({{2}, {3}}), Tensor::vector({1}));
  EXPECT_EQ(y, Tensor::vector({6}));
}

TEST(Linear, MatchesTripleLoop) {
  std::mt19937_64 rng(3);
  const Tensor x = testutil::random_tensor({3, 5, 4}, rng);
  const Tensor W = testutil::random_tensor({4, 6}, rng);
  const Tensor b = testutil::random_tensor({6}, rng);
  const Tensor y = linear_forward(x, W, b);
  ASSERT_EQ(y.shape(), (Shape{3, 5, 6}));
  for (size_t a = 0; a < 3; ++a)
    for (size_t r = 0; r < 5; ++r)
      for (size_t o = 0; o < 6; ++o) {
        double acc = b[o];
        for (size_t i = 0; i < 4; ++i) acc += x(a, r, i) * W(i, o);
        EXPECT_NEAR(y(a, r, o), acc, 1e-12);
      }
}

TEST(Linear, ShapeMismatchThrows) {
  EXPECT_THROW(linear_forward(Tensor({3}), Tensor({2, 2}), Tensor({2})), DimensionError);
  EXPECT_THROW(linear_forward(Tensor({2}), Tensor({2, 2}), Tensor({3})), DimensionError);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor x = testutil::random_tensor({3, 4}, rng);
    const Tensor W = testutil::random_tensor({4, 2}, rng);
    const Tensor b = testutil::random_tensor({2}, rng);
    const Tensor g = testutil::random_tensor({3, 2}, rng);
    auto dot = [&](const Tensor& y) {
      double s = 0;
      for (size_t i = 0; i < y.size(); ++i) s += y[i] * g[i];
      return s;
    };
    Tensor dx, dW({4, 2}), db({2});
    linear_backward(x, W, g, &dx, dW, db);
    EXPECT_LE(max_relative_error(dx, finite_diff_grad([&](const Tensor& v) {
                                   return dot(linear_forward(v, W, b));
                                 }, x, 1e-6)), 1e-4);
    EXPECT_LE(max_relative_error(dW, finite_diff_grad([&](const Tensor& v) {
                                   return dot(linear_forward(x, v, b));
                                 }, W, 1e-6)), 1e-4);
    EXPECT_LE(max_relative_error(db, finite_diff_grad([&](const Tensor& v) {
                                   return dot(linear_forward(x, W, v));
                                 }, b, 1e-6)), 1e-4);
  }
}

TEST(LeakyRelu, Definition) {
  const Tensor y = leaky_relu(Tensor::vector({-1, 0, 2}), 0.01);
  EXPECT_DOUBLE_EQ(y[0], -0.01);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  const Tensor pos = Tensor::vector({0, 1, 3.5});
  EXPECT_EQ(leaky_relu(pos, 0.2), pos);
}

TEST(LeakyRelu, GradientAtNegativeEqualsSlope) {
  const Tensor x = Tensor::vector({-3});
  const Tensor fd = finite_diff_grad([](const Tensor& v) { return leaky_relu(v, 0.01)[0]; }, x, 1e-6);
  EXPECT_NEAR(fd[0], 0.01, 1e-8);
  EXPECT_DOUBLE_EQ(leaky_relu_backward(x, Tensor::vector({1}), 0.01)[0], 0.01);
}

TEST(Softmax, UniformAndStable) {
  Tensor y = softmax(Tensor::vector({0, 0, 0}), 0);
  for (size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
  y = softmax(Tensor::vector({1000, 0}), 0);
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAlongEachAxis) {
  std::mt19937_64 rng(1);
  const Tensor x = testutil::random_tensor({3, 4, 5}, rng, 3.0);
  for (size_t axis = 0; axis < 3; ++axis) {
    const Tensor y = softmax(x, axis);
    for (size_t a = 0; a < 3; ++a)
      for (size_t b = 0; b < 4; ++b)
        for (size_t c = 0; c < 5; ++c) {
          size_t idx[3] = {a, b, c};
          if (idx[axis] != 0) continue;
          double sum = 0;
          for (size_t k = 0; k < x.dim(axis); ++k) {
            idx[axis] = k;
            sum += y(idx[0], idx[1], idx[2]);
          }
          EXPECT_NEAR(sum, 1.0, 1e-12);
        }
  }
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const Tensor x = testutil::random_tensor({2, 5}, rng);
    const Tensor g = testutil::random_tensor({2, 5}, rng);
    auto f = [&](const Tensor& v) {
      const Tensor y = softmax(v, 1);
      double s = 0;
      for (size_t i = 0; i < y.size(); ++i) s += y[i] * g[i];
      return s;
    };
    const Tensor analytic = softmax_backward(softmax(x, 1), g, 1);
    EXPECT_LE(max_relative_error(analytic, finite_diff_grad(f, x, 1e-6)), 1e-5);
  }
}

TEST(HeInit, MomentsAndDeterminism) {
  const Tensor a = he_init({100000}, 2, 42);
  double mean = a.sum() / a.size(), var = 0;
  for (double v : a.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (a.size() - 1));
  EXPECT_NEAR(sd, 1.0, 0.02);
  EXPECT_TRUE(bitwise_equal(a, he_init({100000}, 2, 42)));
  EXPECT_FALSE(a == he_init({100000}, 2, 43));
  EXPECT_THROW(he_init({3}, 0, 1), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Tensor p = Tensor::vector({1, -2, 3});
  const Tensor before = p;
  Tensor g({3});
  std::vector<Tensor*> ps{&p};
  std::vector<const Tensor*> gs{&g};
  std::vector<const Tensor*> cps{&p};
  AdamState st(cps, AdamConfig{});
  adam_step(ps, gs, st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::vector({0.5});
  Tensor g = Tensor::vector({1.0});
  std::vector<Tensor*> ps{&p};
  std::vector<const Tensor*> gs{&g}, cps{&p};
  AdamState st(cps, AdamConfig{});
  adam_step(ps, gs, st);
  EXPECT_NEAR(p[0] - 0.5, -0.001, 1e-10);
}

TEST(Adam, DeterministicAndShapeChecked) {
  Tensor p1 = Tensor::vector({0.3, 0.1}), p2 = p1;
  Tensor g = Tensor::vector({0.7, -0.2});
  std::vector<const Tensor*> gs{&g}, c1{&p1};
  AdamState s1(c1, AdamConfig{}), s2 = s1;
  std::vector<Tensor*> a{&p1}, b{&p2};
  adam_step(a, gs, s1);
  adam_step(b, gs, s2);
  EXPECT_TRUE(bitwise_equal(p1, p2));
  Tensor bad({3});
  std::vector<const Tensor*> badg{&bad};
  EXPECT_THROW(adam_step(a, badg, s1), DimensionError);
}

TEST(FiniteDiff, SumOfSquaresAndConstant) {
  const Tensor x = Tensor::vector({1, 2});
  const Tensor g = finite_diff_grad([](const Tensor& v) { return v[0] * v[0] + v[1] * v[1]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);
  const Tensor z = finite_diff_grad([](const Tensor&) { return 3.0; }, x, 1e-5);
  EXPECT_EQ(z, Tensor({2}));
}

TEST(Purity, OpsAreBitReproducible) {
  std::mt19937_64 rng(9);
  const Tensor x = testutil::random_tensor({4, 6}, rng);
  EXPECT_TRUE(bitwise_equal(softmax(x, 1), softmax(x, 1)));
  EXPECT_TRUE(bitwise_equal(leaky_relu(x, 0.01), leaky_relu(x, 0.01)));
}
