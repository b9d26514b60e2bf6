#include "mstex/network.hpp"

#include <gtest/gtest.h>

#include "mstex/feature_stats.hpp"
#include "test_support.hpp"

namespace mstex {
namespace {

using testing::random_image;
using testing::ScratchDir;
using testing::tiny_network;

TEST(Extract, TapCountAndResolutionLadder) {
  const auto fx = tiny_network();
  EXPECT_EQ(fx.tap_layers(), (std::vector<int>{1, 2, 3}));
  const auto img = random_image(64, 48, 3, 1);
  const auto acts = fx.extract(img);
  ASSERT_EQ(acts.size(), 3u);
  EXPECT_EQ(acts.layers[0].rows(), 8);
  EXPECT_EQ(acts.layers[1].rows(), 12);
  EXPECT_EQ(acts.layers[2].rows(), 16);
  EXPECT_EQ(acts.layers[0].cols(), 64 * 48);
  EXPECT_EQ(acts.layers[1].cols(), 32 * 24);
  EXPECT_EQ(acts.layers[2].cols(), 16 * 12);
  for (std::size_t l = 1; l < acts.size(); ++l)
    EXPECT_LT(acts.layers[l].cols(), acts.layers[l - 1].cols());
}

TEST(Extract, FiveResolutionLevelsYieldFiveTaps) {
  const auto fx = FeatureExtractor::make_random({{4}, {6}, {8}, {10}, {12}},
                                                PoolKind::Max, {}, 21);
  EXPECT_EQ(fx.tap_layers(), (std::vector<int>{1, 2, 3, 4, 5}));
  const auto acts = fx.extract(random_image(64, 64, 3, 22));
  ASSERT_EQ(acts.size(), 5u);
  for (std::size_t l = 1; l < acts.size(); ++l)
    EXPECT_EQ(acts.layers[l].cols(), acts.layers[l - 1].cols() / 4);
}

TEST(Extract, DeterministicAcrossCalls) {
  const auto fx = tiny_network();
  const auto img = random_image(40, 40, 3, 2);
  const auto a = fx.extract(img);
  const auto b = fx.extract(img);
  for (std::size_t l = 0; l < a.size(); ++l)
    EXPECT_EQ(Eigen::MatrixXd(a.layers[l]), Eigen::MatrixXd(b.layers[l]));
}

TEST(Extract, RejectsWrongChannelCountAndSmallImages) {
  const auto fx = tiny_network();
  EXPECT_THROW(fx.extract(random_image(64, 64, 5, 3)), Error);
  EXPECT_THROW(fx.extract(random_image(16, 64, 3, 4)), Error);
  EXPECT_THROW(fx.extract(random_image(64, 31, 3, 5)), Error);
}

TEST(SaveLoad, WeightsRoundTripBitExact) {
  ScratchDir dir("weights");
  const auto fx = tiny_network(9);
  fx.save(dir.path("net.mnet"));
  const auto back = FeatureExtractor::load(dir.path("net.mnet"));
  EXPECT_EQ(back.tap_layers(), fx.tap_layers());
  EXPECT_EQ(back.name(), fx.name());
  const auto img = random_image(48, 48, 3, 6);
  const auto a = fx.extract(img);
  const auto b = back.extract(img);
  for (std::size_t l = 0; l < a.size(); ++l)
    EXPECT_EQ(Eigen::MatrixXd(a.layers[l]), Eigen::MatrixXd(b.layers[l]));
}

TEST(SaveLoad, CorruptFilesRejected) {
  ScratchDir dir("weights_bad");
  {
    std::ofstream out(dir.path("junk.mnet"), std::ios::binary);
    out << "definitely not weights";
  }
  EXPECT_THROW(FeatureExtractor::load(dir.path("junk.mnet")), Error);
  // Truncated blob.
  const auto fx = tiny_network(10);
  fx.save(dir.path("net.mnet"));
  {
    std::ifstream in(dir.path("net.mnet"), std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    content.resize(content.size() - 64);
    std::ofstream out(dir.path("trunc.mnet"), std::ios::binary);
    out << content;
  }
  EXPECT_THROW(FeatureExtractor::load(dir.path("trunc.mnet")), Error);
}

TEST(TapLayers, ValidatedAndOverridable) {
  auto fx = FeatureExtractor::make_random({{4, 4}, {6, 6}, {8}}, PoolKind::Max, {}, 11);
  EXPECT_EQ(fx.default_tap_layers(), (std::vector<int>{1, 3, 5}));
  fx.set_tap_layers({1, 2, 4});
  EXPECT_EQ(fx.tap_channels(), (std::vector<int>{4, 4, 6}));
  EXPECT_THROW(fx.set_tap_layers({0}), Error);
  EXPECT_THROW(fx.set_tap_layers({2, 2}), Error);
  EXPECT_THROW(fx.set_tap_layers({6}), Error);
}

TEST(Extract, Vgg19ShapedArchitecture) {
  // Full VGG19 block structure with random weights: five resolution levels,
  // default taps at the first conv of each (ordinals 1,3,5,9,13), and the
  // published-index override 1,3,5,8,11 accepted.
  auto fx = FeatureExtractor::make_random(
      {{64, 64}, {128, 128}, {256, 256, 256, 256}, {512, 512, 512, 512},
       {512, 512, 512, 512}},
      PoolKind::Max, {255.0, {103.939, 116.779, 123.68}}, 30, "vgg19_random");
  EXPECT_EQ(fx.conv_count(), 16);
  EXPECT_EQ(fx.default_tap_layers(), (std::vector<int>{1, 3, 5, 9, 13}));
  EXPECT_EQ(fx.tap_channels(), (std::vector<int>{64, 128, 256, 512, 512}));
  const auto acts = fx.extract(random_image(64, 64, 3, 31));
  ASSERT_EQ(acts.size(), 5u);
  EXPECT_EQ(acts.layers[4].rows(), 512);
  EXPECT_EQ(acts.layers[4].cols(), 4 * 4);

  fx.set_tap_layers({1, 3, 5, 8, 11});
  EXPECT_EQ(fx.tap_channels(), (std::vector<int>{64, 128, 256, 256, 512}));
  const auto acts2 = fx.extract(random_image(64, 64, 3, 32));
  EXPECT_EQ(acts2.layers[3].rows(), 256);
}

TEST(CovarianceStats, SpatiallyConstantActivationsGiveZero) {
  FeatureActivations acts;
  acts.layers.push_back(Eigen::MatrixXd::Constant(4, 10, 3.7));
  acts.heights.push_back(2);
  acts.widths.push_back(5);
  const auto stats = covariance_stats(acts);
  EXPECT_LT(stats[0].cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CovarianceStats, MatchesBruteForceDefinition) {
  FeatureActivations acts;
  Eigen::MatrixXd f(2, 4);
  f << 1.0, 2.0, 3.0, 4.0,
       0.5, -1.0, 2.5, 0.0;
  acts.layers.push_back(f);
  const auto stats = covariance_stats(acts);
  // Direct per-definition computation.
  Eigen::Vector2d mu(2.5, 0.5);
  Eigen::Matrix2d expected = Eigen::Matrix2d::Zero();
  for (int m = 0; m < 4; ++m) {
    const Eigen::Vector2d d = f.col(m) - mu;
    expected += d * d.transpose();
  }
  expected /= 4.0;
  EXPECT_LT((stats[0] - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CovarianceStats, BlindToSpatialPermutation) {
  Rng rng(12);
  FeatureActivations acts;
  Eigen::MatrixXd f(5, 24);
  for (int r = 0; r < f.rows(); ++r)
    for (int c = 0; c < f.cols(); ++c) f(r, c) = rng.normal();
  acts.layers.push_back(f);
  // Deterministic shuffle of spatial positions.
  Eigen::MatrixXd shuffled = f;
  std::vector<int> perm(f.cols());
  for (int i = 0; i < int(perm.size()); ++i) perm[i] = i;
  for (int i = int(perm.size()) - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(i + 1)]);
  for (int c = 0; c < f.cols(); ++c) shuffled.col(c) = f.col(perm[c]);
  FeatureActivations acts2;
  acts2.layers.push_back(shuffled);
  EXPECT_LT((covariance_stats(acts)[0] - covariance_stats(acts2)[0]).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_LT((gram_stats(acts)[0] - gram_stats(acts2)[0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CovarianceStats, PositiveSemiDefinite) {
  const auto fx = tiny_network(13);
  const auto stats = covariance_stats(fx.extract(random_image(48, 48, 3, 14)));
  for (const auto& g : stats) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g);
    EXPECT_GE(solver.eigenvalues().minCoeff(), -1e-6 * g.trace());
    EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GramStats, SingleChannelConstantClosedForm) {
  FeatureActivations acts;
  acts.layers.push_back(Eigen::MatrixXd::Constant(1, 7, 1.5));
  const auto stats = gram_stats(acts);
  EXPECT_NEAR(stats[0](0, 0), 1.5 * 1.5, 1e-14);
}

TEST(GramStats, EqualsCovarianceForCenteredActivations) {
  Rng rng(15);
  Eigen::MatrixXd f(3, 12);
  for (int r = 0; r < f.rows(); ++r)
    for (int c = 0; c < f.cols(); ++c) f(r, c) = rng.normal();
  f.colwise() -= Eigen::VectorXd(f.rowwise().mean());
  FeatureActivations acts;
  acts.layers.push_back(f);
  EXPECT_LT((gram_stats(acts)[0] - covariance_stats(acts)[0]).cwiseAbs().maxCoeff(),
            1e-13);
}

TEST(GramStats, MatchesBruteForceOuterProductSum) {
  Rng rng(16);
  Eigen::MatrixXd f(3, 9);
  for (int r = 0; r < f.rows(); ++r)
    for (int c = 0; c < f.cols(); ++c) f(r, c) = rng.normal();
  FeatureActivations acts;
  acts.layers.push_back(f);
  Eigen::Matrix3d expected = Eigen::Matrix3d::Zero();
  for (int m = 0; m < 9; ++m) expected += f.col(m) * f.col(m).transpose();
  expected /= 9.0;
  EXPECT_LT((gram_stats(acts)[0] - expected).cwiseAbs().maxCoeff(), 1e-13);
}

// Central finite differences on sampled pixels against the analytic backward
// pass, through the full stack: network + statistics + Frobenius norm. The
// taps-{1,3} variant exercises gradient flow through an untapped layer.
TEST(Backward, GradientMatchesFiniteDifferences) {
  struct Variant {
    PoolKind pooling;
    std::vector<int> taps;
  };
  for (const auto& [pooling, taps] :
       {Variant{PoolKind::Average, {}}, Variant{PoolKind::Max, {}},
        Variant{PoolKind::Max, {1, 3}}}) {
    auto fx = tiny_network(17, pooling);
    if (!taps.empty()) fx.set_tap_layers(taps);
    const auto img = random_image(48, 48, 3, 18);

    const auto loss_of = [&](const MultispectralImage& input) {
      const auto stats = covariance_stats(fx.extract(input));
      double loss = 0.0;
      for (const auto& g : stats) loss += g.squaredNorm();
      return loss;
    };

    ForwardContext ctx;
    const auto acts = fx.extract(img, &ctx);
    const auto stats = covariance_stats(acts);
    std::vector<Eigen::MatrixXd> d_taps(stats.size());
    for (std::size_t l = 0; l < stats.size(); ++l)
      d_taps[l] = stats_backward(acts.layers[l], 2.0 * stats[l], StatKind::Covariance);
    const auto grad = fx.backward(ctx, d_taps);

    Rng rng(19);
    const double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 12; ++trial) {
      const int p = int(rng.below(std::uint64_t(img.pixel_count())));
      const int c = int(rng.below(3));
      auto plus = img;
      auto minus = img;
      plus.data[std::size_t(p) * 3 + c] += h;
      minus.data[std::size_t(p) * 3 + c] -= h;
      const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
      const double an = grad.data[std::size_t(p) * 3 + c];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom < 1e-10) continue;  // flat direction, nothing to compare
      EXPECT_LT(std::abs(fd - an) / denom, 1e-3)
          << "pooling=" << (pooling == PoolKind::Max ? "max" : "avg")
          << " pixel=" << p << " ch=" << c << " fd=" << fd << " an=" << an;
      ++checked;
    }
    EXPECT_GE(checked, 10);
  }
}

}  // namespace
}  // namespace mstex
