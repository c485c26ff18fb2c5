#include <gtest/gtest.h>

#include <algorithm>

#include "decaps/ops.hpp"
#include "decaps/rng.hpp"
#include "decaps/spread_loss.hpp"
#include "support/oracles.hpp"

using namespace decaps;

namespace {

double loss_of(std::vector<double> a, std::size_t t, double m) {
  const std::size_t targets[] = {t};
  const std::size_t classes = a.size();
  return spread_loss(Tensor::from({1, classes}, std::move(a)), targets, m).item();
}

}  // namespace

TEST(SpreadLoss, WorkedExample) { EXPECT_NEAR(loss_of({0.9, 0.2, 0.5}, 0, 0.5), 0.01, 1e-15); }

TEST(SpreadLoss, SatisfiedMarginsGiveExactZero) { EXPECT_EQ(loss_of({0.95, 0.1, 0.3}, 0, 0.5), 0.0); }

TEST(SpreadLoss, EqualActivationsTwoClasses) { EXPECT_NEAR(loss_of({0.4, 0.4}, 1, 0.2), 0.04, 1e-15); }

TEST(SpreadLoss, BatchMean) {
  const std::size_t targets[] = {0, 1};
  const Tensor a = Tensor::from({2, 2}, {0.4, 0.4, 0.9, 0.1});
  // Sample 0: 0.04; sample 1: max(0, 0.2 + 0.8)^2 = 1.
  EXPECT_NEAR(spread_loss(a, targets, 0.2).item(), 0.52, 1e-15);
}

TEST(SpreadLoss, TargetOutOfRange) {
  const std::size_t targets[] = {3};
  EXPECT_THROW(spread_loss(Tensor::from({1, 2}, {0.1, 0.2}), targets, 0.2), std::out_of_range);
}

TEST(SpreadLoss, MatchesOracleAndGradientSigns) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng.below(5), t = rng.below(C);
    std::vector<double> a(C);
    for (double& v : a) v = rng.uniform();
    const double m = rng.uniform(0.05, 0.95);
    Tensor act = Tensor::from({1, C}, a, true);
    const std::size_t targets[] = {t};
    const Tensor loss = spread_loss(act, targets, m);
    EXPECT_NEAR(loss.item(), oracle::spread_loss(a, t, m), 1e-12);
    EXPECT_GE(loss.item(), 0.0);
    backward(loss);
    EXPECT_LE(act.grad()[t], 0.0);
    for (std::size_t j = 0; j < C; ++j) {
      if (j != t && m - (a[t] - a[j]) > 0) {
        EXPECT_GE(act.grad()[j], 0.0);
      }
    }
  }
}

TEST(SpreadLoss, InvariantUnderPermutingOtherClasses) {
  EXPECT_NEAR(loss_of({0.5, 0.3, 0.45, 0.1}, 0, 0.4), loss_of({0.5, 0.45, 0.1, 0.3}, 0, 0.4), 1e-15);
}

TEST(MarginSchedule, Values) {
  EXPECT_EQ(margin_at(0), 0.2);
  EXPECT_EQ(margin_at(2), 0.3);
  EXPECT_EQ(margin_at(3), 0.3);
  EXPECT_EQ(margin_at(100), 0.9);
  const double expected[] = {0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.5, 0.5, 0.6, 0.6};
  for (std::size_t e = 0; e < 10; ++e) EXPECT_EQ(margin_at(e), expected[e]) << e;
}

TEST(MarginSchedule, NonDecreasingAndCapped) {
  double prev = 0;
  for (std::size_t e = 0; e < 60; ++e) {
    EXPECT_GE(margin_at(e), prev);
    EXPECT_LE(margin_at(e), 0.9);
    prev = margin_at(e);
  }
}
