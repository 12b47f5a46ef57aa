#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "splm/grad_check.hpp"
#include "splm/ops.hpp"
#include "splm/suite.hpp"

using namespace splm;
using testing_support::tensor;
using TD = Tensor<double>;

TEST(Tensor, FromRejectsSizeMismatch) {
  EXPECT_THROW(TD::from({2, 3}, {1, 2, 3}), std::invalid_argument);
  auto t = TD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
}

TEST(Backward, SumGivesOnes) {
  auto x = TD::from({3}, {0.5, -2, 7}, true);
  auto loss = ops::sum(x);
  backward(loss);
  ASSERT_TRUE(x.has_grad());
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ReluSubgradient) {
  auto x = TD::from({3}, {-1, 2, 0}, true);
  auto loss = ops::sum(ops::relu(x));
  backward(loss);
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 0.0);  // defined as 0 at the kink
}

TEST(Backward, ProductAndSumRulesExact) {
  auto a = TD::from({2}, {1.5, -0.25}, true);
  auto b = TD::from({2}, {3.0, 2.0}, true);
  auto c = TD::from({2}, {-4.0, 0.5}, true);
  auto loss = ops::sum(ops::mul(ops::add(a, b), c));
  backward(loss);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(a.grad()[i], c.data()[i]);
    EXPECT_EQ(b.grad()[i], c.data()[i]);
    EXPECT_EQ(c.grad()[i], a.data()[i] + b.data()[i]);
  }
}

TEST(Backward, RepeatedCallThrowsUntilReset) {
  auto x = TD::from({2}, {1, 2}, true);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), std::logic_error);
  loss.reset_backward();
  EXPECT_NO_THROW(backward(loss));
  EXPECT_EQ(x.grad()[1], 8.0);  // accumulated twice: 2 * (2 * 2)
}

TEST(Backward, NonScalarLossThrows) {
  auto x = TD::from({2}, {1, 2}, true);
  auto y = ops::scale(x, 2.0);
  EXPECT_THROW(backward(y), std::invalid_argument);
}

TEST(Backward, DetachedLossIsFlaggedNoOp) {
  auto x = TD::from({2}, {1, 2}, false);
  auto loss = ops::sum(x);
  const auto report = backward(loss);
  EXPECT_TRUE(report.detached);
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, SharedSubgraphVisitedOnce) {
  auto x = TD::from({1}, {3.0}, true);
  auto y = ops::mul(x, x);        // 9
  auto z = ops::add(y, y);        // 18, y used twice
  auto loss = ops::sum(ops::mul(z, x));  // 2 x^3
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6 * 9.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = TD::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = ops::mul(x, x);
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(grad_enabled());
}

TEST(Backward, EveryReachableParameterGetsGrad) {
  auto w = TD::from({2, 2}, {1, 2, 3, 4}, true);
  auto b = TD::from({2}, {0, 0}, true);
  auto unused = TD::from({2}, {0, 0}, true);
  auto x = TD::from({1, 2}, {1, -1});
  auto loss = ops::sum(ops::add(ops::matmul(x, w), b));
  backward(loss);
  EXPECT_TRUE(w.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_FALSE(unused.has_grad());
  EXPECT_EQ(w.grad().size(), w.data().size());
}

TEST(CausalConv, ImpulseGivesKernel) {
  std::vector<double> h{0.3, -1, 2, 0.5, 4, -7, 1.25};
  auto out = ops::causal_conv1d(tensor({8}, {1, 0, 0, 0, 0, 0, 0, 0}), tensor({7}, h));
  for (std::size_t t = 0; t < 7; ++t) EXPECT_EQ(out.data()[t], h[t]);
  EXPECT_EQ(out.data()[7], 0.0);
}

TEST(CausalConv, StepResponse) {
  std::vector<double> h{0.5, 0.25, -1.0};
  const double c = 2.0;
  auto out = ops::causal_conv1d(TD::full({6}, c), tensor({3}, h));
  EXPECT_EQ(out.data()[0], c * 0.5);
  EXPECT_EQ(out.data()[1], c * 0.5 + c * 0.25);
  for (std::size_t t = 2; t < 6; ++t) EXPECT_DOUBLE_EQ(out.data()[t], c * (0.5 + 0.25 - 1.0));
}

TEST(CausalConv, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = oracle::random_vec(rng, 16);
    auto h = oracle::random_vec(rng, 7);
    auto out = ops::causal_conv1d(tensor({16}, s), tensor({7}, h));
    const auto ref = oracle::conv(s, h);
    for (std::size_t t = 0; t < 16; ++t) ASSERT_EQ(out.data()[t], ref[t]);
  }
}

TEST(CausalConv, FutureSamplesDoNotLeak) {
  std::mt19937_64 rng(5);
  auto s = oracle::random_vec(rng, 20);
  auto h = oracle::random_vec(rng, 5);
  const auto base = ops::causal_conv1d(tensor({20}, s), tensor({5}, h)).to_vector();
  for (std::size_t p = 0; p < 20; ++p) {
    auto s2 = s;
    for (std::size_t q = p + 1; q < 20; ++q) s2[q] += 100.0 * double(q);
    const auto out = ops::causal_conv1d(tensor({20}, s2), tensor({5}, h)).to_vector();
    for (std::size_t t = 0; t <= p; ++t) ASSERT_EQ(out[t], base[t]);
  }
}

TEST(CausalConv, EmptyInputsThrow) {
  EXPECT_THROW(ops::causal_conv1d(TD::zeros({0}), TD::zeros({3})), std::invalid_argument);
  EXPECT_THROW(ops::causal_conv1d(TD::zeros({4}), TD::zeros({0})), std::invalid_argument);
}

TEST(Softmax, RowsSumToOneAndCausalZeros) {
  std::mt19937_64 rng(2);
  auto x = tensor({2, 6, 6}, oracle::random_vec(rng, 72, -5, 5));
  auto y = ops::softmax(x, true);
  for (std::size_t r = 0; r < 12; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += y.data()[r * 6 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
    const std::size_t t = r % 6;
    for (std::size_t c = t + 1; c < 6; ++c) EXPECT_EQ(y.data()[r * 6 + c], 0.0);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLnV) {
  auto z = TD::zeros({5, 27});
  std::vector<int> t{0, 3, 26, 9, 13};
  EXPECT_NEAR(ops::cross_entropy(z, t).item(), std::log(27.0), 1e-9);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto z = tensor({4, 27}, oracle::random_vec(rng, 108, -3, 3));
  std::vector<int> t{1, 26, 0, 17};
  EXPECT_LT(grad_check([&](const TD& a) { return ops::cross_entropy(a, t); }, z), 1e-6);
}

TEST(GradCheck, SquareFunction) {
  auto x = TD::from({1}, {3.0});
  EXPECT_LT(grad_check([](const TD& a) { return ops::sum(ops::mul(a, a)); }, x), 1e-8);
}

TEST(GradCheck, NonFiniteIsNumericFailure) {
  auto x = TD::from({1}, {1e308});
  EXPECT_THROW(grad_check([](const TD& a) { return ops::sum(ops::mul(a, a)); }, x),
               NumericFailure);
}

TEST(GradCheck, ConvReluWeightedSum) {
  std::mt19937_64 rng(4);
  auto s = tensor({8}, oracle::random_vec(rng, 8));
  auto k = tensor({3}, oracle::random_vec(rng, 3));
  auto w = tensor({8}, oracle::random_vec(rng, 8));
  auto f = [&] { return ops::sum(ops::mul(ops::relu(ops::causal_conv1d(s, k)), w)); };
  EXPECT_LT(grad_check_report(f, {s, k}).tensor_rel, 1e-6);
}

TEST(GradCheck, SuitePassesOverTwentySeeds) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& r : suite::gradient_suite(seed)) {
      EXPECT_TRUE(r.passed) << r.name << " seed " << seed << " rel " << r.rel_err;
    }
  }
}

TEST(Broadcast, SuffixBroadcastAddMul) {
  auto a = tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = tensor({3}, {10, 20, 30});
  auto s = ops::add(a, b);
  auto m = ops::mul(a, b);
  EXPECT_EQ(s.data()[4], 25.0);
  EXPECT_EQ(m.data()[5], 180.0);
  EXPECT_THROW(ops::add(a, tensor({2}, {1, 2})), std::invalid_argument);
}

TEST(Precision, FloatPathRuns) {
  auto x = Tensor<float>::from({3}, {1.f, -2.f, 3.f}, true);
  auto loss = ops::sum(ops::relu(x));
  backward(loss);
  EXPECT_EQ(x.grad()[1], 0.f);
  EXPECT_EQ(loss.item(), 4.f);
}
