#include <gtest/gtest.h>

#include "ctta/fdc_loss.hpp"
#include "support.hpp"

using namespace ctta;
using namespace ctta::testing;

namespace {

ag::Var<double> row(std::vector<double> v) {
  const std::size_t c = v.size();
  return ag::Var<double>(Tensor<double>({1, c}, std::move(v)));
}

double entropy(const Tensor<double>& p) {
  double h = 0.0;
  for (double v : p.values()) h -= v * std::log(v);
  return h / static_cast<double>(p.dim(0));
}

}  // namespace

TEST(CrossEntropy, OneHotAgainstItself) {
  EXPECT_DOUBLE_EQ(cross_entropy(row({0, 1, 0}), row({0, 1, 0})).item(), 0.0);
}

TEST(CrossEntropy, UniformTenClasses) {
  auto u = row(std::vector<double>(10, 0.1));
  EXPECT_NEAR(cross_entropy(u, u).item(), 2.302585, 1e-6);
}

TEST(CrossEntropy, HalfHalf) {
  EXPECT_NEAR(cross_entropy(row({1, 0}), row({0.5, 0.5})).item(), 0.693147, 1e-6);
}

TEST(CrossEntropy, ShapeMismatch) {
  EXPECT_THROW(cross_entropy(row({1, 0}), row({0.2, 0.3, 0.5})), ConfigError);
}

TEST(LossSingle, ConsistentPairGivesEntropy) {
  std::mt19937_64 rng(0);
  auto y = random_probs(6, 5, rng);
  EXPECT_NEAR(loss_single(ag::Var<double>(y), ag::Var<double>(y)).item(), entropy(y), 1e-12);
}

TEST(LossSingle, UniformWholePredictionGivesLogC) {
  std::mt19937_64 rng(1);
  auto p = random_probs(4, 7, rng);
  auto y = Tensor<double>({4, 7}, 1.0 / 7.0);
  EXPECT_NEAR(loss_single(ag::Var<double>(p), ag::Var<double>(y)).item(), std::log(7.0), 1e-12);
}

TEST(LossSingle, MatchesOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    auto p = random_probs(8, 10, rng), y = random_probs(8, 10, rng);
    EXPECT_NEAR(loss_single(ag::Var<double>(p), ag::Var<double>(y)).item(), oracle_ce(to_matrix(p), to_matrix(y)),
                1e-10);
  }
}

TEST(LossSingle, TargetIsDetachedUnlessSymmetric) {
  std::mt19937_64 rng(3);
  ag::Var<double> p(random_probs(3, 4, rng), true), y(random_probs(3, 4, rng), true);
  loss_single(p, y).backward();
  EXPECT_FALSE(p.has_grad());
  EXPECT_TRUE(y.has_grad());
  p.zero_grad();
  y.zero_grad();
  loss_single(p, y, true).backward();
  EXPECT_TRUE(p.has_grad());
}

TEST(Mixup, RatioOneKeepsFirst) {
  std::mt19937_64 rng(4);
  auto xi = random_images(3, 4, rng), xj = random_images(3, 4, rng);
  auto yi = random_probs(3, 5, rng), yj = random_probs(3, 5, rng);
  auto m = mixup_pair(xi, xj, ag::Var<double>(yi), ag::Var<double>(yj), 1.0);
  EXPECT_EQ(m.images, xi);
  EXPECT_EQ(m.targets.value(), yi);
}

TEST(Mixup, HalfRatioOnOneHots) {
  Tensor<float> x({1, 3, 2, 2});
  auto m = mixup_pair(x, x, row({1, 0, 0}), row({0, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(m.targets.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(m.targets.value()[1], 0.0);
  EXPECT_DOUBLE_EQ(m.targets.value()[2], 0.5);
}

TEST(Mixup, BetaOneMeanIsHalf) {
  std::mt19937_64 rng(5);
  MixupConfig cfg;
  double s = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double r = sample_mixup_ratio(cfg, rng);
    ASSERT_GE(r, 0.0);
    ASSERT_LE(r, 1.0);
    s += r;
  }
  EXPECT_NEAR(s / n, 0.5, 0.01);
}

TEST(Mixup, RolledPairsNeighbours) {
  std::mt19937_64 rng(6);
  auto x = random_images(4, 2, rng);
  auto y = random_probs(4, 3, rng);
  auto m = mixup_rolled(x, ag::Var<double>(y), 0.3);
  const std::size_t row_px = x.size() / 4;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t j = (i + 1) % 4;
    for (std::size_t k = 0; k < row_px; ++k)
      EXPECT_NEAR(m.images[i * row_px + k], 0.3f * x[i * row_px + k] + 0.7f * x[j * row_px + k], 1e-6);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(m.targets.value().at(i, c), 0.3 * y.at(i, c) + 0.7 * y.at(j, c), 1e-15);
  }
}

TEST(Mixup, TargetsDetachedByDefault) {
  std::mt19937_64 rng(7);
  auto x = random_images(2, 2, rng);
  ag::Var<double> y(random_probs(2, 3, rng), true);
  EXPECT_FALSE(mixup_rolled(x, y, 0.4).targets.requires_grad());
  EXPECT_TRUE(mixup_rolled(x, y, 0.4, true).targets.requires_grad());
}

TEST(LossMixup, ConsistentEndpointGivesEntropy) {
  std::mt19937_64 rng(8);
  auto x = random_images(3, 2, rng);
  auto y = random_probs(3, 4, rng);
  auto m = mixup_pair(x, x, ag::Var<double>(y), ag::Var<double>(random_probs(3, 4, rng)), 1.0);
  EXPECT_NEAR(loss_mixup(m.targets, ag::Var<double>(y)).item(), entropy(y), 1e-12);
}

TEST(LossMixup, UniformPredictionGivesLogC) {
  std::mt19937_64 rng(9);
  auto t = random_probs(5, 6, rng);
  EXPECT_NEAR(loss_mixup(ag::Var<double>(t), ag::Var<double>(Tensor<double>({5, 6}, 1.0 / 6))).item(), std::log(6.0),
              1e-12);
}

TEST(LossMixup, MatchesOracle) {
  std::mt19937_64 rng(10);
  Tensor<float> x({6, 3, 2, 2});
  for (int t = 0; t < 20; ++t) {
    auto yi = random_probs(6, 10, rng), yj = random_probs(6, 10, rng), pred = random_probs(6, 10, rng);
    const double rho = std::uniform_real_distribution<double>(0, 1)(rng);
    auto m = mixup_pair(x, x, ag::Var<double>(yi), ag::Var<double>(yj), rho);
    Matrix mixed = to_matrix(yi);
    const Matrix mj = to_matrix(yj);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 10; ++c) mixed[i][c] = rho * mixed[i][c] + (1 - rho) * mj[i][c];
    EXPECT_NEAR(loss_mixup(m.targets, ag::Var<double>(pred)).item(), oracle_ce(mixed, to_matrix(pred)), 1e-10);
  }
}

TEST(LossFdc, ComposesFromItsTerms) {
  std::mt19937_64 rng(11);
  auto p = random_probs(4, 5, rng), y = random_probs(4, 5, rng), t = random_probs(4, 5, rng),
       q = random_probs(4, 5, rng);
  auto single = loss_single(ag::Var<double>(p), ag::Var<double>(y));
  auto mix = loss_mixup(ag::Var<double>(t), ag::Var<double>(q));
  EXPECT_EQ(ag::add(single, mix).item(), single.item() + mix.item());
}
