#include <gtest/gtest.h>

#include <cmath>

#include "decaps/capsule.hpp"
#include "decaps/ops.hpp"
#include "support/gradcheck.hpp"

using namespace decaps;
using decaps::testing::random_tensor;

namespace {

double vec_norm(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

Tensor with_norm(std::size_t d, double n, Rng& rng) {
  Tensor t = random_tensor({d}, rng);
  const double cur = vec_norm(t);
  for (double& v : t.mutable_values()) v *= n / cur;
  return t;
}

}  // namespace

TEST(Squash, ZeroVectorStaysZero) {
  const Tensor s = squash(Tensor::zeros({16}));
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(Squash, UnitNormGivesHalf) {
  Rng rng(1);
  EXPECT_NEAR(vec_norm(squash(with_norm(16, 1.0, rng))), 0.5, 1e-9);
}

TEST(Squash, SaturatesBelowOne) {
  Rng rng(2);
  const double n = vec_norm(squash(with_norm(16, 1000.0, rng)));
  EXPECT_LT(n, 1.0);
  EXPECT_NEAR(n, 1.0, 1e-5);
}

TEST(Squash, NormFollowsFormulaAndKeepsDirection) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double target = std::exp(rng.uniform(-6, 6));
    const Tensor s = with_norm(4, target, rng);
    const Tensor q = squash(s);
    EXPECT_NEAR(vec_norm(q), target * target / (1 + target * target), 1e-9);
    EXPECT_LT(vec_norm(q), 1.0);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(q.at({k}) * target, s.at({k}) * vec_norm(q), 1e-9);
  }
}

TEST(PoseActivation, ZeroAndUnitAndMonotone) {
  Rng rng(4);
  EXPECT_EQ(pose_activation(PoseField{Tensor::zeros({1, 1, 1, 1, 16})}).item(), 0.0);
  const Tensor dir = with_norm(16, 1.0, rng);
  double prev = -1.0;
  for (double n : {0.1, 0.5, 1.0, 2.0, 5.0, 50.0}) {
    const Tensor pose = reshape(scale(dir, n), {1, 1, 1, 1, 16});
    const double a = pose_activation(PoseField{pose}).item();
    if (n == 1.0) {
      EXPECT_NEAR(a, 0.5, 1e-9);
    }
    EXPECT_GT(a, prev);
    EXPECT_LT(a, 1.0);
    prev = a;
  }
}

TEST(PoseField, DimensionMustBeSquare) {
  EXPECT_THROW(PoseField{Tensor::zeros({1, 1, 2, 2, 5})}.validate(), ShapeError);
  EXPECT_NO_THROW(PoseField{Tensor::zeros({1, 1, 2, 2, 16})}.validate());
}

TEST(PrimaryCapsules, FullSizeProjectionHas512Channels) {
  Rng rng(5);
  const PrimaryCapsules pc(512, 32, 16, rng);
  EXPECT_EQ(pc.weight().shape(), (Shape{512, 512, 1, 1}));
  const PoseField f = pc(Tensor::zeros({1, 512, 2, 2}));
  EXPECT_EQ(f.poses.shape(), (Shape{1, 32, 2, 2, 16}));
}

TEST(PrimaryCapsules, DeskProjectionHas128Channels) {
  Rng rng(6);
  const PrimaryCapsules pc(64, 8, 16, rng);
  EXPECT_EQ(pc.weight().size(0), 128u);
  const PoseField f = pc(random_tensor({2, 64, 3, 3}, rng));
  EXPECT_EQ(f.poses.shape(), (Shape{2, 8, 3, 3, 16}));
}

TEST(PrimaryCapsules, ZeroFeaturesGiveZeroPoses) {
  Rng rng(7);
  const PrimaryCapsules pc(8, 2, 4, rng);
  const Tensor poses = pc(Tensor::zeros({1, 8, 3, 3})).poses;
  for (double v : poses.values()) EXPECT_EQ(v, 0.0);
}

TEST(PrimaryCapsules, MismatchedProjectionRejected) {
  EXPECT_THROW(PrimaryCapsules(Tensor::zeros({30, 8, 1, 1}), 2, 16), ShapeError);
}

TEST(PrimaryCapsules, ChannelLayoutIsHeadMajor) {
  // Channel h * d + k of the projection becomes pose entry k of head h.
  std::vector<double> w(2 * 4 * 1, 0.0);
  for (std::size_t c = 0; c < 8; ++c) w[c] = static_cast<double>(c + 1);
  const PrimaryCapsules pc(Tensor::from({8, 1, 1, 1}, w), 2, 4);
  const PoseField f = pc(Tensor::full({1, 1, 1, 1}, 1.0));
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(f.poses.at({0, h, 0, 0, k}), static_cast<double>(h * 4 + k + 1));
}

TEST(ConvCapsuleVotes, GridArithmetic) {
  EXPECT_EQ(capsule_grid_extent(28, 3, 1), 26u);
  EXPECT_EQ(capsule_grid_extent(26, 3, 1), 24u);
  EXPECT_EQ(capsule_grid_extent(7, 1, 1), 7u);
  EXPECT_EQ(capsule_grid_extent(7, 3, 2), 3u);
  EXPECT_THROW(capsule_grid_extent(2, 3, 1), ShapeError);
}

TEST(ConvCapsuleVotes, ShapesAndIdentityWindow) {
  Rng rng(8);
  const PoseField p{random_tensor({1, 2, 6, 6, 4}, rng)};
  const TransformBank w = TransformBank::init(2, 3, 4, 4, rng);
  const VoteField v = conv_capsule_votes(p, random_tensor({2, 3, 3}, rng), w, 1);
  EXPECT_EQ(v.votes.shape(), (Shape{1, 2, 3, 4, 4, 4}));
  // K = 1 with a unit kernel leaves the grid and the poses as they are.
  const VoteField id = conv_capsule_votes(p, Tensor::full({2, 1, 1}, 1.0), w, 1);
  EXPECT_EQ(id.height(), 6u);
  const VoteField direct = capsule_votes(p, w);
  for (std::size_t i = 0; i < direct.votes.numel(); ++i) EXPECT_NEAR(id.votes.values()[i], direct.votes.values()[i], 1e-12);
}

TEST(ConvCapsuleVotes, GridSmallerThanKernelRejected) {
  Rng rng(9);
  EXPECT_THROW(conv_capsule_votes(PoseField{Tensor::zeros({1, 1, 2, 2, 4})}, Tensor::zeros({1, 3, 3}),
                                  TransformBank::init(1, 1, 4, 4, rng), 1),
               ShapeError);
}

TEST(ConvCapsuleVotes, MatchesDirectWindowSumAndTransform) {
  Rng rng(10);
  const std::size_t B = 2, J = 2, H = 5, W = 4, d = 4, K = 3, s = 1;
  const Tensor poses = random_tensor({1, B, H, W, d}, rng);
  const Tensor kernel = random_tensor({B, K, K}, rng);
  const TransformBank w = TransformBank::init(B, J, d, d, rng);
  const VoteField v = conv_capsule_votes(PoseField{poses}, kernel, w, s);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t x = 0; x < H - K + 1; ++x)
        for (std::size_t y = 0; y < W - K + 1; ++y)
          for (std::size_t e = 0; e < d; ++e) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              double mixed = 0.0;
              for (std::size_t a = 0; a < K; ++a)
                for (std::size_t b = 0; b < K; ++b) mixed += kernel.at({i, a, b}) * poses.at({0, i, x + a, y + b, k});
              acc += mixed * w.weights.at({i, j, k, e});
            }
            EXPECT_NEAR(v.votes.at({0, i, j, x, y, e}), acc, 1e-12);
          }
}

TEST(ConvCapsuleVotes, LinearInPoses) {
  Rng rng(11);
  const Tensor poses = random_tensor({1, 2, 4, 4, 4}, rng);
  const Tensor kernel = random_tensor({2, 3, 3}, rng);
  const TransformBank w = TransformBank::init(2, 2, 4, 4, rng);
  const VoteField a = conv_capsule_votes(PoseField{poses}, kernel, w, 1);
  const VoteField b = conv_capsule_votes(PoseField{scale(poses, 2.0)}, kernel, w, 1);
  for (std::size_t i = 0; i < a.votes.numel(); ++i) EXPECT_EQ(b.votes.values()[i], 2.0 * a.votes.values()[i]);
}

TEST(TransformBank, OneMatrixPerHeadAndParentWithinBound) {
  Rng rng(12);
  const TransformBank w = TransformBank::init(3, 2, 16, 16, rng);
  EXPECT_EQ(w.weights.shape(), (Shape{3, 2, 16, 16}));
  const double bound = std::sqrt(6.0 / 32.0);
  for (double v : w.weights.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(AddCoordinates, SingleCellUnchanged) {
  Rng rng(13);
  const Tensor v = random_tensor({1, 1, 2, 1, 1, 4}, rng);
  const VoteField out = add_coordinates(VoteField{v});
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_EQ(out.votes.values()[i], v.values()[i]);
}

TEST(AddCoordinates, TwoByTwoGridOfZeros) {
  const VoteField out = add_coordinates(VoteField{Tensor::zeros({1, 1, 1, 2, 2, 4})});
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 2; ++y) {
      EXPECT_EQ(out.votes.at({0, 0, 0, x, y, 2}), 0.5 * static_cast<double>(x));
      EXPECT_EQ(out.votes.at({0, 0, 0, x, y, 3}), 0.5 * static_cast<double>(y));
      EXPECT_EQ(out.votes.at({0, 0, 0, x, y, 0}), 0.0);
      EXPECT_EQ(out.votes.at({0, 0, 0, x, y, 1}), 0.0);
    }
}

TEST(AddCoordinates, TouchesAtMostTwoEntries) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t H = 1 + rng.below(4), W = 1 + rng.below(4), d = 2 + rng.below(8);
    const Tensor v = random_tensor({1, 2, 2, H, W, d}, rng);
    const VoteField out = add_coordinates(VoteField{v});
    for (std::size_t i = 0; i < v.numel(); ++i) {
      if (i % d < d - 2) {
        EXPECT_EQ(out.votes.values()[i], v.values()[i]);
      }
    }
  }
}
