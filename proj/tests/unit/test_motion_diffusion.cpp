#include <gtest/gtest.h>

#include <torch/torch.h>

#include <cmath>

#include "pmtk/error.hpp"
#include "pmtk/motion_diffusion.hpp"
#include "pmtk/synthetic_data.hpp"
#include "pmtk/train_util.hpp"

using namespace pmtk;
using diffusion::NoiseSchedule;

namespace {

MotionModelConfig small_model(bool use_bridge = true) {
  MotionModelConfig c;
  c.audio.channels = 32;
  c.audio.conv_channels = {16, 32};
  c.audio.layers = 1;
  c.bridge.width = 32;
  c.bridge.layers = 1;
  c.denoiser.width = 32;
  c.denoiser.blocks = 2;
  c.denoiser.use_bridge = use_bridge;
  c.diffusion_steps = 50;
  c.finalize();
  return c;
}

}  // namespace

TEST(Schedule, LinearEndpointsAndMonotoneAlphaBar) {
  auto s = NoiseSchedule::linear(1000);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_NEAR(s.beta(1000), 0.02, 1e-15);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  double prod = 1.0;
  for (std::int64_t t = 1; t <= 1000; ++t) {
    prod *= 1.0 - s.beta(t);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-12);
  }
  auto s100 = NoiseSchedule::linear(100);
  EXPECT_NEAR(s100.beta(100), 0.2, 1e-12);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 0.05}), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 1.0}), InvalidArgument);
  EXPECT_THROW(s.beta(0), InvalidArgument);
}

TEST(QSample, ZeroNoiseScalesSignalExactly) {
  auto s = NoiseSchedule::linear(100);
  auto p0 = torch::randn({3, 10, 16});
  auto pt = diffusion::q_sample(s, p0, 37, torch::zeros_like(p0));
  EXPECT_TRUE(torch::allclose(pt, p0 * std::sqrt(s.alpha_bar(37)), 0, 0));
  EXPECT_THROW(diffusion::q_sample(s, p0, 0, p0), InvalidArgument);
  EXPECT_THROW(diffusion::q_sample(s, p0, 101, p0), InvalidArgument);
  EXPECT_THROW(diffusion::q_sample(s, p0, 5, torch::zeros({3})), InvalidArgument);
}

TEST(QSample, FinalStepIsMostlyNoise) {
  auto s = NoiseSchedule::linear(100);
  auto gen = make_generator(4);
  auto p0 = torch::randn({1000}, gen, torch::kDouble);
  auto eps = torch::randn({1000}, gen, torch::kDouble);
  auto pt = diffusion::q_sample(s, p0, 100, eps);
  auto corr = torch::corrcoef(torch::stack({pt, p0}))[0][1].item<double>();
  EXPECT_LT(std::abs(corr), 0.2);
}

TEST(QSample, PredictX0InvertsQSample) {
  auto s = NoiseSchedule::linear(100);
  auto p0 = torch::randn({2, 8, 4}, torch::kDouble);
  auto eps = torch::randn({2, 8, 4}, torch::kDouble);
  auto pt = diffusion::q_sample(s, p0, 60, eps);
  EXPECT_TRUE(torch::allclose(diffusion::predict_x0(s, pt, 60, eps), p0, 1e-9, 1e-9));
}

TEST(EpsLoss, OracleIsZeroAndZeroModelIsOne) {
  auto s = NoiseSchedule::linear(100);
  auto gen = make_generator(7);
  auto p0 = torch::randn({10000, 16}, gen);
  auto t = torch::randint(1, 101, {10000}, gen, torch::kLong);
  auto eps = torch::randn({10000, 16}, gen);
  diffusion::EpsPredictor oracle = [&](const torch::Tensor&, const torch::Tensor&) { return eps; };
  diffusion::EpsPredictor zero = [&](const torch::Tensor& x, const torch::Tensor&) { return torch::zeros_like(x); };
  EXPECT_EQ(diffusion::training_loss_at(oracle, s, p0, t, eps).item<double>(), 0.0);
  EXPECT_NEAR(diffusion::training_loss_at(zero, s, p0, t, eps).item<double>(), 1.0, 0.05);
  // Plain norm: per-sample RMS of 16 unit normals, just under 1.
  EXPECT_NEAR(diffusion::training_loss_at(zero, s, p0, t, eps, LossNorm::L2).item<double>(), 1.0, 0.05);
}

TEST(Denoiser, BandLimitsCrossAttention) {
  torch::manual_seed(0);
  MotionDenoiserConfig c;
  c.width = 32;
  c.blocks = 1;
  c.z_dim = 16;
  c.audio_dim = 8;
  c.cross_radius = 2;
  diffusion::MotionDenoiser d(c);
  torch::NoGradGuard ng;
  // The output projection starts at zero; give every weight a value.
  auto gen = make_generator(3);
  for (auto& p : d->parameters()) p.copy_(torch::randn(p.sizes(), gen) * 0.2);
  const std::int64_t n = 20;
  auto x = torch::randn({1, n, 16});
  auto t = torch::tensor({5}, torch::kLong);
  auto p1 = torch::randn({1, 16});
  auto z = torch::randn({1, n, 16});
  auto a = torch::randn({1, n, 8});
  auto base = d->forward(x, t, p1, z, a);
  auto a2 = a.clone();
  a2[0][15] += 3.0;
  auto z2 = z.clone();
  z2[0][15] -= 3.0;
  auto moved = d->forward(x, t, p1, z2, a2);
  auto diff = (moved - base).abs().amax({0, 2});
  // With one block, memory reaches motion token i only through its own
  // cross-attention row.
  for (std::int64_t i = 13; i <= 17; ++i) EXPECT_GT(diff[i].item<double>(), 0.0) << i;
  double far = 0.0, near = 0.0;
  for (std::int64_t i = 0; i < 8; ++i) far = std::max(far, diff[i].item<double>());
  for (std::int64_t i = 13; i <= 17; ++i) near = std::max(near, diff[i].item<double>());
  EXPECT_EQ(far, 0.0);
  EXPECT_GT(near, 0.0);
}

TEST(MotionModel, SamplingIsSeedDeterministic) {
  torch::manual_seed(0);
  diffusion::MotionModel m(small_model());
  m->eval();
  auto audio = data::generate_audio(1, 0.8, 2);
  auto first = data::rest_pose(3);
  auto a = m->sample(audio, first, 20, 99);
  auto b = m->sample(audio, first, 20, 99);
  auto c = m->sample(audio, first, 20, 100);
  EXPECT_EQ(a.n_frames, 20);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(MotionModel, LossFallsDuringEarlyTraining) {
  torch::manual_seed(0);
  diffusion::MotionModel m(small_model());
  data::GeneratorConfig g;
  std::vector<diffusion::MotionClip> clips;
  std::vector<torch::Tensor> motions;
  for (int i = 0; i < 8; ++i) {
    auto s = data::generate_sample(g, i, 0);
    auto motion = torch::from_blob(s.motion.values.data(), {s.motion.n_frames, 16}, torch::kFloat32).clone();
    auto audio = torch::from_blob(s.audio.samples.data(), {(std::int64_t)s.audio.samples.size()}, torch::kFloat32).clone();
    clips.push_back({motion, audio});
    motions.push_back(motion);
  }
  m->fit_normalization(motions);
  MotionTrainConfig cfg;
  cfg.steps = 500;
  cfg.batch = 8;
  cfg.window = 24;
  auto opt = diffusion::make_motion_optimizer(m, cfg);
  auto r = diffusion::train_motion(m, opt, clips, cfg, 3);
  auto smooth = moving_average(r.losses, 50);
  ASSERT_EQ(smooth.size(), 500u);
  for (std::size_t s = 149; s < 500; s += 100) EXPECT_LT(smooth[s], smooth[s - 100]) << "step " << s + 1;
  EXPECT_LT(smooth.back(), 0.6 * smooth[49]);
}
