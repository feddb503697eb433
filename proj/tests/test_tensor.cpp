#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "hmresnet/tensor.hpp"
#include "oracles.hpp"

using hmresnet::Shape;
using hmresnet::ShapeError;
using hmresnet::Tensor;

namespace {

Tensor<double> T1(std::initializer_list<double> v) { return Tensor<double>::vector(v); }

void expect_near_all(const Tensor<double>& a, const Tensor<double>& b,
                     double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(Tensor, RejectsBufferShapeMismatch) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(hmresnet::Shape1D(0, 4), ShapeError);
}

TEST(Conv1d, IdentityKernel) {
  Tensor<double> x({1, 4}, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 1}, {1});
  auto y = hmresnet::conv1d(x, w, T1({0}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Conv1d, BoxKernelMatchesDirectSum) {
  Tensor<double> x({1, 4}, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 3}, {1, 1, 1});
  const auto expected = oracle::direct_conv(x, w, T1({0}));
  EXPECT_EQ(expected.values(), (std::vector<double>{3, 6, 9, 7}));
  EXPECT_EQ(hmresnet::conv1d(x, w, T1({0})).values(), expected.values());
}

TEST(Conv1d, TwoChannelMixMatchesDirectSum) {
  Tensor<double> x({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor<double> w({1, 2, 1}, {2, 3});
  const auto expected = oracle::direct_conv(x, w, T1({1}));
  EXPECT_EQ(expected.values(), (std::vector<double>{3, 4, 1}));
  EXPECT_EQ(hmresnet::conv1d(x, w, T1({1})).values(), expected.values());
}

TEST(Conv1d, EvenKernelPadsExtraZeroOnTheRight) {
  // s = 2: out[t] = w0 * x[t] + w1 * x[t+1]
  Tensor<double> x({1, 3}, {1, 2, 3});
  Tensor<double> w({1, 1, 2}, {10, 1});
  EXPECT_EQ(hmresnet::conv1d(x, w, T1({0})).values(),
            (std::vector<double>{12, 23, 30}));
}

TEST(Conv1d, RandomBatchesMatchDirectSum) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t s = 1 + 2 * (seed % 5);
    auto x = oracle::random_tensor({3, 4, 11}, seed);
    auto w = oracle::random_tensor({5, 4, s}, seed + 100);
    auto b = oracle::random_tensor({5}, seed + 200);
    expect_near_all(hmresnet::conv1d(x, w, b), oracle::direct_conv(x, w, b), 1e-12);
  }
}

TEST(Conv1d, ShapeErrorsNameDimensions) {
  Tensor<double> x({2, 5});
  Tensor<double> w({3, 4, 3});
  try {
    hmresnet::conv1d(x, w, Tensor<double>({3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("C_in"), std::string::npos);
  }
  EXPECT_THROW(hmresnet::conv1d(x, Tensor<double>({3, 2, 3}), Tensor<double>({2})),
               ShapeError);
}

TEST(Conv1d, PreservesLengthForOddKernels) {
  for (std::size_t L = 1; L <= 12; ++L)
    for (std::size_t s = 1; s <= 2 * L + 1; s += 2) {
      Tensor<double> x({2, L}, 1.0);
      Tensor<double> w({3, 2, s}, 0.5);
      EXPECT_EQ(hmresnet::conv1d(x, w, Tensor<double>({3})).shape(), (Shape{3, L}));
    }
}

TEST(Conv1d, IsLinearInTheInput) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_tensor({3, 9}, 1000 + trial);
    auto y = oracle::random_tensor({3, 9}, 2000 + trial);
    auto w = oracle::random_tensor({2, 3, 5}, 3000 + trial);
    Tensor<double> zero_b({2});
    const double a = u(rng), b = u(rng);
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    auto lhs = hmresnet::conv1d(mix, w, zero_b);
    auto cx = hmresnet::conv1d(x, w, zero_b);
    auto cy = hmresnet::conv1d(y, w, zero_b);
    for (std::size_t i = 0; i < lhs.size(); ++i)
      EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-10);
  }
}

TEST(Conv1dGrad, ZeroUpstreamGivesZeroGradients) {
  auto x = oracle::random_tensor({2, 6}, 1);
  auto w = oracle::random_tensor({3, 2, 3}, 2);
  auto g = hmresnet::conv1d_grad(x, w, Tensor<double>({3, 6}));
  for (const auto* t : {&g.input, &g.kernels, &g.bias})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv1dGrad, BiasGradientIsUpstreamSum) {
  Tensor<double> x({1, 4}, {1, 2, 3, 4});
  Tensor<double> w({1, 1, 1}, {1});
  auto g = hmresnet::conv1d_grad(x, w, Tensor<double>({1, 4}, 1.0));
  EXPECT_EQ(g.bias.values(), (std::vector<double>{4}));
}

TEST(Conv1dGrad, MatchesFiniteDifferencesSeed7) {
  auto x = oracle::random_tensor({2, 5}, 7);
  auto w = oracle::random_tensor({3, 2, 3}, 7 + 1);
  auto b = oracle::random_tensor({3}, 7 + 2);
  auto up = oracle::random_tensor({3, 5}, 7 + 3);
  auto loss = [&] { return oracle::dot(up, oracle::direct_conv(x, w, b)); };
  auto g = hmresnet::conv1d_grad(x, w, up);
  EXPECT_LT(oracle::max_relative_error(g.input, oracle::numeric_gradient(x, loss)), 1e-6);
  EXPECT_LT(oracle::max_relative_error(g.kernels, oracle::numeric_gradient(w, loss)), 1e-6);
  EXPECT_LT(oracle::max_relative_error(g.bias, oracle::numeric_gradient(b, loss)), 1e-6);
}

TEST(Conv1dGrad, PropertyRandomShapes) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t B = 1 + seed % 3, C = 1 + seed % 4, L = 3 + seed % 7,
                      O = 1 + seed % 5, s = 1 + 2 * (seed % 3);
    auto x = oracle::random_tensor({B, C, L}, seed);
    auto w = oracle::random_tensor({O, C, s}, seed * 3);
    auto b = oracle::random_tensor({O}, seed * 5);
    auto up = oracle::random_tensor({B, O, L}, seed * 7);
    auto loss = [&] { return oracle::dot(up, oracle::direct_conv(x, w, b)); };
    auto g = hmresnet::conv1d_grad(x, w, up);
    EXPECT_LT(oracle::max_relative_error(g.input, oracle::numeric_gradient(x, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(g.kernels, oracle::numeric_gradient(w, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(g.bias, oracle::numeric_gradient(b, loss)), 1e-6);
  }
}

TEST(GlobalAveragePool, Means) {
  EXPECT_EQ(hmresnet::global_average_pool(Tensor<double>({3, 7}, 5.0)).values(),
            (std::vector<double>{5, 5, 5}));
  EXPECT_EQ(hmresnet::global_average_pool(Tensor<double>({1, 4}, {1, 2, 3, 4})).values(),
            (std::vector<double>{2.5}));
  EXPECT_EQ(hmresnet::global_average_pool(Tensor<double>({2, 2}, {1, 3, -2, 2})).values(),
            (std::vector<double>{2, 0}));
}

TEST(GlobalAveragePool, InvariantUnderTimePermutation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_tensor({3, 16}, 50 + trial);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> xp(x.shape());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 16; ++t) xp(c, t) = x(c, perm[t]);
    expect_near_all(hmresnet::global_average_pool(x), hmresnet::global_average_pool(xp),
                    1e-14);
  }
}

TEST(GlobalAveragePool, GradientMatchesFiniteDifferences) {
  auto x = oracle::random_tensor({2, 3, 6}, 9);
  auto up = oracle::random_tensor({2, 3}, 10);
  auto loss = [&] { return oracle::dot(up, hmresnet::global_average_pool(x)); };
  auto g = hmresnet::global_average_pool_grad(x.shape(), up);
  EXPECT_LT(oracle::max_relative_error(g, oracle::numeric_gradient(x, loss)), 1e-6);
}

TEST(MatmulAffine, IdentityAndSmallCases) {
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto x = T1({0.5, -2, 7});
  EXPECT_EQ(hmresnet::matmul_affine(x, eye, Tensor<double>({3})).values(), x.values());
  EXPECT_EQ(hmresnet::matmul_affine(T1({2, 3}), Tensor<double>({1, 2}, {1, 1}), T1({1}))
                .values(),
            (std::vector<double>{6}));
}

TEST(MatmulAffine, RandomMatchesNaiveTripleLoopSeed3) {
  auto w = oracle::random_tensor({4, 3}, 3);
  auto x = oracle::random_tensor({3}, 3 + 1);
  auto b = oracle::random_tensor({4}, 3 + 2);
  expect_near_all(hmresnet::matmul_affine(x, w, b), oracle::naive_affine(x, w, b), 1e-15);
}

TEST(MatmulAffine, DimensionMismatch) {
  EXPECT_THROW(hmresnet::matmul_affine(T1({1, 2}), Tensor<double>({2, 3}), T1({0, 0})),
               ShapeError);
  EXPECT_THROW(hmresnet::matmul_affine(T1({1, 2, 3}), Tensor<double>({2, 3}), T1({0})),
               ShapeError);
}

TEST(MatmulAffine, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto x = oracle::random_tensor({5}, seed);
    auto w = oracle::random_tensor({3, 5}, seed + 50);
    auto b = oracle::random_tensor({3}, seed + 90);
    auto up = oracle::random_tensor({3}, seed + 130);
    auto loss = [&] { return oracle::dot(up, oracle::naive_affine(x, w, b)); };
    auto g = hmresnet::matmul_affine_grad(x, w, up);
    EXPECT_LT(oracle::max_relative_error(g.input, oracle::numeric_gradient(x, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(g.weights, oracle::numeric_gradient(w, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(g.bias, oracle::numeric_gradient(b, loss)), 1e-6);
  }
}
