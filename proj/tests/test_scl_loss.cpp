#include <gtest/gtest.h>

#include "ctta/scl_loss.hpp"
#include "support.hpp"

using namespace ctta;
using namespace ctta::testing;

namespace {

Tensor<double> rows_with_max(const std::vector<double>& maxima, std::size_t c) {
  Tensor<double> p({maxima.size(), c});
  for (std::size_t i = 0; i < maxima.size(); ++i) {
    p.at(i, 0) = maxima[i];
    for (std::size_t j = 1; j < c; ++j) p.at(i, j) = (1.0 - maxima[i]) / static_cast<double>(c - 1);
  }
  return p;
}

ConfidenceState state(double mu, double sigma2, std::vector<double> cm) {
  ConfidenceState s;
  s.mu = mu;
  s.sigma2 = sigma2;
  s.class_mean = std::move(cm);
  return s;
}

}  // namespace

TEST(Scl, InitialState) {
  auto s = ConfidenceState::initial(10);
  EXPECT_DOUBLE_EQ(s.mu, 0.1);
  EXPECT_DOUBLE_EQ(s.sigma2, 1.0);
  for (double v : s.class_mean) EXPECT_DOUBLE_EQ(v, 0.1);
}

TEST(Scl, ConstantBatchStats) {
  auto st = batch_stats(rows_with_max({0.7, 0.7, 0.7}, 3));
  EXPECT_DOUBLE_EQ(st.mean, 0.7);
  EXPECT_NEAR(st.variance, 0.0, 1e-30);
}

TEST(Scl, HandComputedBatchStats) {
  auto st = batch_stats(rows_with_max({0.2, 0.4, 0.6, 0.8}, 2));
  // row maxima: 0.8 (second entry of the first row), 0.6, 0.6, 0.8
  EXPECT_NEAR(st.mean, 0.7, 1e-15);
  EXPECT_NEAR(st.variance, 0.01, 1e-15);
  auto st5 = batch_stats(rows_with_max({0.2, 0.4, 0.6, 0.8}, 5));
  EXPECT_NEAR(st5.mean, 0.5, 1e-15);
  EXPECT_NEAR(st5.variance, 0.05, 1e-15);
}

TEST(Scl, SingleRowHasZeroVariance) {
  EXPECT_EQ(batch_stats(rows_with_max({0.9}, 4)).variance, 0.0);
}

TEST(Scl, EmaHandArithmetic) {
  auto s = state(0.5, 0.2, {0.5, 0.5});
  auto next = ema_update(s, {0.7, 0.0}, 4, {0.5, 0.5}, 0.999);
  EXPECT_NEAR(next.mu, 0.5002, 1e-15);
  EXPECT_EQ(next.step, 1u);
}

TEST(Scl, EmaBesselFactor) {
  auto s = state(0.5, 0.0, {0.5, 0.5});
  auto next = ema_update(s, {0.5, 0.04}, 2, {0.5, 0.5}, 0.0);
  EXPECT_NEAR(next.sigma2, 0.08, 1e-15);
}

TEST(Scl, EmaZeroMomentumCopiesBatch) {
  auto s = state(0.3, 0.9, {0.2, 0.8});
  auto next = ema_update(s, {0.6, 0.05}, 5, {0.7, 0.3}, 0.0);
  EXPECT_DOUBLE_EQ(next.mu, 0.6);
  EXPECT_DOUBLE_EQ(next.sigma2, 0.05 * 5.0 / 4.0);
  EXPECT_EQ(next.class_mean, (std::vector<double>{0.7, 0.3}));
}

TEST(Scl, EmaSingleSampleKeepsVariance) {
  auto s = state(0.3, 0.9, {0.5, 0.5});
  auto next = ema_update(s, {0.6, 0.0}, 1, {0.6, 0.4}, 0.5);
  EXPECT_DOUBLE_EQ(next.sigma2, 0.9);
  EXPECT_DOUBLE_EQ(next.mu, 0.45);
}

TEST(Scl, EmaRejectsBadMomentum) {
  auto s = ConfidenceState::initial(2);
  EXPECT_THROW(ema_update(s, {}, 2, {0.5, 0.5}, 1.0), ConfigError);
  EXPECT_THROW(ema_update(s, {}, 2, {0.5, 0.5}, -0.1), ConfigError);
}

TEST(Scl, ClassMeanStaysOnSimplex) {
  std::mt19937_64 rng(0);
  auto s = ConfidenceState::initial(6);
  for (int t = 0; t < 50; ++t) {
    auto p = random_probs(16, 6, rng);
    s = ema_update(s, batch_stats(p), 16, batch_class_mean(p), 0.9);
  }
  double sum = 0.0;
  for (double v : s.class_mean) {
    EXPECT_GT(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Scl, AlignWithUniformMeanIsIdentity) {
  std::mt19937_64 rng(1);
  auto y = random_probs(5, 4, rng);
  auto a = uniform_align(y, std::vector<double>(4, 0.25));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(a[i], y[i], 1e-15);
}

TEST(Scl, AlignHandExample) {
  Tensor<double> y({1, 2}, {0.5, 0.5});
  auto a = uniform_align(y, {0.25, 0.75});
  EXPECT_NEAR(a.at(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(a.at(0, 1), 0.25, 1e-15);
}

TEST(Scl, AlignRowsSumToOne) {
  std::mt19937_64 rng(2);
  auto y = random_probs(30, 10, rng);
  std::vector<double> cm(10);
  double z = 0.0;
  for (auto& v : cm) z += (v = std::uniform_real_distribution<double>(0.01, 1.0)(rng));
  for (auto& v : cm) v /= z;
  auto a = uniform_align(y, cm);
  for (std::size_t i = 0; i < 30; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 10; ++j) s += a.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Scl, AlignFloorsZeroClassMean) {
  Tensor<double> y({1, 2}, {0.5, 0.5});
  auto a = uniform_align(y, {0.0, 1.0});
  EXPECT_TRUE(std::isfinite(a.at(0, 0)));
  EXPECT_GT(a.at(0, 0), 0.99);
}

TEST(Scl, WeightAboveMeanIsMax) {
  EXPECT_DOUBLE_EQ(gaussian_weight(0.9, 0.6, 0.01, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(gaussian_weight(0.6, 0.6, 0.01, 1.0), 1.0);
}

TEST(Scl, WeightOneAndTwoSigmaBelow) {
  const double mu = 0.7, sigma = 0.1;
  EXPECT_NEAR(gaussian_weight(mu - sigma, mu, sigma * sigma, 1.0), 0.60653, 1e-5);
  EXPECT_NEAR(gaussian_weight(mu - 2 * sigma, mu, sigma * sigma, 1.0), 0.13534, 1e-5);
}

TEST(Scl, WeightRangeAndContinuity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const double mu = u(rng), s2 = 1e-4 + u(rng) * 0.2, q = u(rng);
    const double w = gaussian_weight(q, mu, s2, 1.0);
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, 1.0);
    EXPECT_NEAR(gaussian_weight(mu - 1e-9, mu, s2, 1.0), gaussian_weight(mu, mu, s2, 1.0), 1e-8);
  }
}

TEST(Scl, SampleWeightClampsVariance) {
  auto s = state(0.9, 0.0, {0.5, 0.5});
  Tensor<double> y({1, 2}, {0.6, 0.4});
  SclConfig cfg;
  auto w = sample_weight(y, s, cfg);
  EXPECT_GE(w[0], 0.0);
  EXPECT_TRUE(std::isfinite(w[0]));
}

TEST(Scl, ZeroWeightsGiveZeroLossAndGradient) {
  std::mt19937_64 rng(4);
  auto y = random_probs(4, 3, rng);
  ag::Var<double> pred(random_probs(4, 3, rng), true);
  auto loss = weighted_cross_entropy(y, pred, std::vector<double>(4, 0.0));
  EXPECT_EQ(loss.item(), 0.0);
  loss.backward();
  for (double g : pred.grad().values()) EXPECT_EQ(g, 0.0);
}

TEST(Scl, IdentityViewGivesWeightedEntropy) {
  std::mt19937_64 rng(5);
  auto y = random_probs(6, 4, rng);
  auto prep = scl_prepare(y, ConfidenceState::initial(4), SclConfig{});
  double want = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < 4; ++j) h -= y.at(i, j) * std::log(y.at(i, j));
    want += prep.weights[i] * h;
  }
  EXPECT_NEAR(loss_scl(prep, ag::Var<double>(y)).item(), want / 6.0, 1e-12);
}

TEST(Scl, PrepareMatchesOracleSequence) {
  std::mt19937_64 rng(6);
  SclConfig cfg;
  cfg.momentum = 0.9;
  auto s = ConfidenceState::initial(5);
  OracleState o{0.2, 1.0, std::vector<double>(5, 0.2)};
  for (int t = 0; t < 100; ++t) {
    auto y = random_probs(16, 5, rng), y_aug = random_probs(16, 5, rng);
    auto prep = scl_prepare(y, s, cfg);
    auto [want, next] = oracle_scl(to_matrix(y), to_matrix(y_aug), o, cfg.momentum);
    EXPECT_NEAR(loss_scl(prep, ag::Var<double>(y_aug)).item(), want, 1e-10);
    EXPECT_NEAR(prep.state.mu, next.mu, 1e-12);
    EXPECT_NEAR(prep.state.sigma2, next.sigma2, 1e-12);
    s = prep.state;
    o = next;
  }
}

TEST(Scl, HardLabelsAreOneHot) {
  std::mt19937_64 rng(7);
  auto y = random_probs(5, 3, rng);
  SclConfig cfg;
  cfg.hard_labels = true;
  auto prep = scl_prepare(y, ConfidenceState::initial(3), cfg);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = prep.pseudo_labels.at(i, j);
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      s += v;
    }
    EXPECT_EQ(s, 1.0);
  }
}

TEST(Scl, ClassCountMismatch) {
  std::mt19937_64 rng(8);
  EXPECT_THROW(scl_prepare(random_probs(2, 3, rng), ConfidenceState::initial(4), SclConfig{}), ConfigError);
}

TEST(Augment, IdentityPolicyIsNoOp) {
  std::mt19937_64 rng(9);
  auto x = random_images(3, 6, rng);
  EXPECT_EQ(augment(x, AugmentPolicy::identity(), rng), x);
}

TEST(Augment, StaysInUnitRange) {
  std::mt19937_64 rng(10);
  auto x = random_images(8, 6, rng);
  AugmentPolicy p;
  p.brightness = 0.5;
  p.contrast = 0.5;
  auto a = augment(x, p, rng);
  EXPECT_EQ(a.shape(), x.shape());
  for (float v : a.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Augment, FlipOnlyMirrorsColumns) {
  std::mt19937_64 rng(11);
  auto x = random_images(2, 4, rng);
  AugmentPolicy p = AugmentPolicy::identity();
  p.flip_prob = 1.0;
  auto a = augment(x, p, rng);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(a.at(b, c, h, w), x.at(b, c, h, 3 - w));
}
