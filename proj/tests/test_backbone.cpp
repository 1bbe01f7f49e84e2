#include <gtest/gtest.h>

#include <filesystem>

#include "ctta/backbone.hpp"
#include "support.hpp"

using namespace ctta;
using namespace ctta::testing;

namespace {

// Parameters of a WRN-28-k with BN affine pairs, bias-free convolutions and 1x1 projection shortcuts.
std::size_t wrn28_params_by_hand(std::size_t k, std::size_t classes) {
  const std::size_t w[3] = {16 * k, 32 * k, 64 * k};
  std::size_t n = 3 * 16 * 9;
  std::size_t in = 16;
  for (int g = 0; g < 3; ++g) {
    for (int b = 0; b < 4; ++b) {
      const std::size_t i = b == 0 ? in : w[g], o = w[g];
      n += 2 * i + 9 * i * o + 2 * o + 9 * o * o;
      if (i != o) n += i * o;
    }
    in = w[g];
  }
  return n + 2 * w[2] + w[2] * classes + classes;
}

Tensor<float> shifted(const Tensor<float>& x, float delta) {
  auto out = x;
  for (auto& v : out.values()) v += delta;
  return out;
}

}  // namespace

TEST(Backbone, BuildIsDeterministic) {
  auto a = build_backbone<float>("small_cnn", 10, 0);
  auto b = build_backbone<float>("small_cnn", 10, 0);
  EXPECT_EQ(a.state(), b.state());
  auto c = build_backbone<float>("small_cnn", 10, 1);
  EXPECT_NE(a.state(), c.state());
}

TEST(Backbone, FeatureShape) {
  auto bb = build_backbone<float>("small_cnn", 10, 0);
  std::mt19937_64 rng(0);
  auto f = bb.features(as_input<float>(random_images(4, 32, rng)));
  ASSERT_EQ(f.shape().size(), 4u);
  EXPECT_EQ(f.dim(0), 4u);
  EXPECT_EQ(f.dim(1), bb.pooled_dim());
  EXPECT_GE(f.dim(2), 1u);
  EXPECT_GE(f.dim(3), 1u);
}

TEST(Backbone, Wrn28ShapeArithmetic) {
  BackboneOptions o;
  o.widen_factor = 1;
  auto small = build_backbone<float>("wrn28", 10, 0, o);
  EXPECT_EQ(small.pooled_dim(), 64u);
  EXPECT_EQ(small.parameter_count(), wrn28_params_by_hand(1, 10));
  std::mt19937_64 rng(0);
  auto f = small.features(as_input<float>(random_images(2, 32, rng)));
  EXPECT_EQ(f.shape(), (Shape{2, 64, 8, 8}));

  auto wide = build_backbone<float>("wrn28", 10, 0);
  EXPECT_EQ(wide.pooled_dim(), 640u);
  EXPECT_EQ(wide.parameter_count(), wrn28_params_by_hand(10, 10));
  EXPECT_EQ(wide.parameter_count(), 36479194u);
}

TEST(Backbone, UnknownArchRejected) {
  EXPECT_THROW(build_backbone<float>("resnet50", 10, 0), ConfigError);
  EXPECT_THROW(parse_norm_mode("train"), ConfigError);
}

TEST(Backbone, CheckpointRoundTripBitExact) {
  ToyDatasetOptions d;
  d.num_samples = 200;
  d.seed = 4;
  auto data = make_toy_dataset(d);
  auto bb = build_backbone<float>("small_cnn", 10, 3, tiny_options());
  auto ckpt = pretrain_source(bb, data, 1, 3);
  const auto path = std::filesystem::temp_directory_path() / "ctta_test_roundtrip.npz";
  ckpt.save(path);
  auto loaded = Checkpoint::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded, ckpt);
  auto rebuilt = backbone_from_checkpoint<float>(loaded);
  EXPECT_EQ(rebuilt.state(), bb.state());
}

TEST(Backbone, ZeroEpochsKeepsInitialization) {
  ToyDatasetOptions d;
  d.num_samples = 64;
  auto data = make_toy_dataset(d);
  auto bb = build_backbone<float>("small_cnn", 10, 5, tiny_options());
  const auto init = bb.state();
  auto ckpt = pretrain_source(bb, data, 0, 5);
  for (const auto& [name, t] : init) EXPECT_EQ(ckpt.param(name), t) << name;
}

TEST(Backbone, PretrainSameSeedIdentical) {
  ToyDatasetOptions d;
  d.num_samples = 128;
  auto data = make_toy_dataset(d);
  auto a = build_backbone<float>("small_cnn", 10, 2, tiny_options());
  auto b = build_backbone<float>("small_cnn", 10, 2, tiny_options());
  EXPECT_EQ(pretrain_source(a, data, 1, 9), pretrain_source(b, data, 1, 9));
}

TEST(Backbone, SourceStatsDeterministic) {
  auto bb = tiny_backbone<double>();
  std::mt19937_64 rng(1);
  auto x = as_input<double>(random_images(3, 8, rng));
  bb.set_norm_mode(NormMode::source_stats);
  EXPECT_EQ(bb.logits(x).value(), bb.logits(x).value());
}

TEST(Backbone, BatchStatsPermutationEquivariant) {
  auto bb = tiny_backbone<double>();
  bb.set_norm_mode(NormMode::batch_stats);
  std::mt19937_64 rng(2);
  auto x = random_images(5, 8, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor<float> xp(x.shape());
  const std::size_t row = x.size() / 5;
  for (std::size_t i = 0; i < 5; ++i) std::copy_n(x.data() + perm[i] * row, row, xp.data() + i * row);
  auto out = bb.logits(as_input<double>(x)).value();
  auto outp = bb.logits(as_input<double>(xp)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < out.dim(1); ++j) EXPECT_NEAR(outp.at(i, j), out.at(perm[i], j), 1e-12);
}

TEST(Backbone, BatchStatsDifferOnShiftedBatch) {
  auto bb = tiny_backbone<double>();
  std::mt19937_64 rng(3);
  auto x = as_input<double>(shifted(random_images(6, 8, rng), 1.0f));
  bb.set_norm_mode(NormMode::source_stats);
  auto src = bb.logits(x).value();
  bb.set_norm_mode(NormMode::batch_stats);
  auto bat = bb.logits(x).value();
  double diff = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) diff = std::max(diff, std::abs(src[i] - bat[i]));
  EXPECT_GT(diff, 1e-3);
}

TEST(Backbone, FloatAndDoubleAgreeFromSameSeed) {
  auto f = tiny_backbone<float>();
  auto d = tiny_backbone<double>();
  std::mt19937_64 rng(4);
  auto x = random_images(2, 8, rng);
  auto lf = f.logits(as_input<float>(x)).value();
  auto ld = d.logits(as_input<double>(x)).value();
  for (std::size_t i = 0; i < lf.size(); ++i) EXPECT_NEAR(lf[i], ld[i], 1e-4);
}

TEST(Backbone, AccuracyHelpers) {
  EXPECT_DOUBLE_EQ(accuracy({1, 2, 3, 4}, {1, 2, 0, 4}), 0.75);
}
