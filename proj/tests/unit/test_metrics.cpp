#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pmtk/error.hpp"
#include "pmtk/metrics.hpp"

using namespace pmtk;
using metrics::GaussianStats;

namespace {

GaussianStats stats(Eigen::VectorXd mean, Eigen::MatrixXd cov) { return {std::move(mean), std::move(cov)}; }

data::MotionSequence constant_motion(std::int64_t n, float value) {
  data::MotionSequence m(n, 25);
  std::fill(m.values.begin(), m.values.end(), value);
  return m;
}

}  // namespace

TEST(Frechet, IdenticalStatsGiveZero) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(5, 5);
  auto s = stats(Eigen::VectorXd::Random(5), a * a.transpose() + Eigen::MatrixXd::Identity(5, 5));
  EXPECT_NEAR(metrics::frechet_distance(s, s), 0.0, 1e-6);
}

TEST(Frechet, UnitCovarianceShift) {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
  mu(0) = 3.0;
  auto a = stats(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4));
  auto b = stats(mu, Eigen::MatrixXd::Identity(4, 4));
  EXPECT_NEAR(metrics::frechet_distance(a, b), 9.0, 1e-9);
}

TEST(Frechet, OneDimensionalClosedForm) {
  auto a = stats(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0));
  auto b = stats(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1.0));
  EXPECT_NEAR(metrics::frechet_distance(a, b), 1.0, 1e-6);
}

TEST(Frechet, SqrtmAndFit) {
  Eigen::MatrixXd m(2, 2);
  m << 4, 0, 0, 9;
  auto r = metrics::sqrtm_psd(m);
  EXPECT_NEAR(r(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(r(1, 1), 3.0, 1e-12);
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  auto s = metrics::fit_gaussian(x, 0.0);
  EXPECT_NEAR(s.mean(0), 2.0, 1e-12);
  EXPECT_NEAR(s.cov(0, 0), 1.0, 1e-12);  // unbiased
  GaussianStats bad = stats(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  bad.cov(0, 1) = 0.5;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Diversity, MatchesBruteForcePair) {
  std::vector<data::MotionSequence> s{constant_motion(10, 0.0f), constant_motion(10, 0.25f)};
  std::mt19937_64 rng(0);
  double brute = 0;
  for (std::size_t k = 0; k < s[0].values.size(); ++k) brute += std::pow(s[0].values[k] - s[1].values[k], 2);
  brute = std::sqrt(brute);
  EXPECT_NEAR(brute, 0.25 * std::sqrt(10.0 * 8 * 2), 1e-6);
  EXPECT_NEAR(metrics::diversity(s, 16, rng), brute, 1e-6);
  std::vector<data::MotionSequence> same{constant_motion(5, 1.0f), constant_motion(5, 1.0f)};
  EXPECT_EQ(metrics::diversity(same, 8, rng), 0.0);
}

TEST(Lvd, LinearDriftGivesSlope) {
  auto ref = constant_motion(20, 0.1f);
  auto gen = ref;
  const double slope = 0.03;
  for (std::int64_t n = 0; n < gen.n_frames; ++n)
    for (std::size_t k = 0; k < gen.frame_size(); ++k) gen.values[n * gen.frame_size() + k] += float(slope * n);
  EXPECT_NEAR(metrics::lvd(gen, ref), slope, 1e-6);
  EXPECT_EQ(metrics::lvd(ref, ref), 0.0);
  EXPECT_EQ(metrics::l1_pose(ref, ref), 0.0);
  EXPECT_NEAR(metrics::l1_pose(constant_motion(4, 0.5f), constant_motion(4, 0.25f)), 0.25, 1e-7);
}

TEST(MaskMetrics, IouAndFlicker) {
  data::RegionMaskSet a(1, 4, 4), b(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a.at(0, data::Region::Face, y, x) = x < 2 ? 1.0f : 0.0f;
      a.at(0, data::Region::Background, y, x) = x < 2 ? 0.0f : 1.0f;
      b.at(0, data::Region::Face, y, x) = x >= 2 ? 1.0f : 0.0f;
      b.at(0, data::Region::Background, y, x) = x >= 2 ? 0.0f : 1.0f;
    }
  EXPECT_EQ(metrics::mask_iou(a, a, metrics::MaskChannel::Face), 1.0);
  EXPECT_EQ(metrics::mask_iou(a, b, metrics::MaskChannel::Face), 0.0);
  EXPECT_EQ(metrics::mask_iou(a, b, metrics::MaskChannel::Body), 1.0);  // both empty
  EXPECT_EQ(metrics::mask_iou(a, a, metrics::MaskChannel::Foreground), 1.0);

  data::RegionMaskSet two(2, 4, 4);
  std::copy(a.values.begin(), a.values.end(), two.values.begin());
  std::copy(b.values.begin(), b.values.end(), two.values.begin() + a.values.size());
  // Face and background flip on every pixel: mean over 3 channels = 2/3.
  EXPECT_NEAR(metrics::flicker(two), 2.0 / 3.0, 1e-7);
  std::copy(a.values.begin(), a.values.end(), two.values.begin() + a.values.size());
  EXPECT_EQ(metrics::flicker(two), 0.0);
  EXPECT_THROW(metrics::flicker(a), InvalidArgument);
}
