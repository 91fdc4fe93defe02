#include <gtest/gtest.h>

#include <torch/torch.h>

#include <cmath>
#include <numbers>

#include "pmtk/error.hpp"
#include "pmtk/moe.hpp"
#include "pmtk/pipeline.hpp"
#include "pmtk/renderer.hpp"
#include "pmtk/synthetic_data.hpp"
#include "pmtk/train_util.hpp"

using namespace pmtk;
constexpr double kPi = std::numbers::pi;

namespace {

RendererConfig tiny_renderer() {
  RendererConfig c;
  c.height = c.width = 32;
  c.ae_channels = 8;
  c.width_high = 16;
  c.width_low = 16;
  c.view_embed_dim = 8;
  c.window = 4;
  c.diffusion_steps = 50;
  return c;
}

void randomize(torch::nn::Module& m, std::uint64_t seed) {
  torch::NoGradGuard ng;
  auto gen = make_generator(seed);
  for (auto& p : m.parameters()) p.copy_(torch::randn(p.sizes(), gen) * 0.2);
}

}  // namespace

TEST(ViewDistance, HandComputedAnchors) {
  auto anchors = moe::anchor_azimuths(12);
  auto d3 = moe::view_distance(torch::tensor({anchors[3]}), 12);
  EXPECT_NEAR(d3[0][3].item<double>(), 0.0, 1e-7);
  auto opp = moe::view_distance(torch::tensor({kPi}), 12);
  EXPECT_NEAR(opp[0][6].item<double>(), 0.0, 1e-6);
  EXPECT_NEAR(opp[0][0].item<double>(), kPi, 1e-6);
}

TEST(ViewDistance, ReflectionSymmetry) {
  auto gen = make_generator(0);
  auto theta = torch::rand({50}, gen, torch::kDouble) * 2 * kPi;
  auto a = moe::view_distance(theta, 12);
  auto b = moe::view_distance(2 * kPi - theta, 12);
  for (int k = 0; k < 12; ++k)
    EXPECT_LE((a.select(1, k) - b.select(1, (12 - k) % 12)).abs().max().item<double>(), 1e-5) << k;
}

TEST(ViewGates, SoftGatesMatchOracle) {
  auto g = moe::view_gates(moe::view_distance(torch::tensor({0.2}), 12), 2, 0.5);
  // softmax(-d / 0.5) evaluated in double precision for azimuth 0.2.
  EXPECT_NEAR(g[0][0].item<double>(), 0.365131695, 1e-6);
  EXPECT_NEAR(g[0][1].item<double>(), 0.2851628857, 1e-6);
  EXPECT_NEAR(g[0][11].item<double>(), 0.1281319440, 1e-6);
  auto gen = make_generator(1);
  auto theta = torch::rand({1000}, gen) * 2 * kPi;
  for (double tau : {0.05, 0.5, 3.0}) {
    auto s = moe::view_gates(moe::view_distance(theta, 12), 2, tau).sum(1);
    EXPECT_LE((s - 1).abs().max().item<double>(), 1e-6);
  }
}

TEST(ViewGates, PhaseOneIsOneHotAtNearestAnchor) {
  auto g = moe::view_gates(moe::view_distance(torch::tensor({1.1, 6.2}), 12), 1, 0.5);
  EXPECT_EQ(g[0].argmax().item<std::int64_t>(), data::nearest_anchor(1.1, 12));
  EXPECT_EQ(g[1].argmax().item<std::int64_t>(), 0);
  EXPECT_EQ(g.sum().item<double>(), 2.0);
  auto u = moe::view_gates(moe::view_distance(torch::tensor({1.1}), 12), 2, 0.5, ViewCombine::AttentionOnly);
  EXPECT_NEAR(u[0][5].item<double>(), 1.0 / 12, 1e-7);
  EXPECT_THROW(moe::view_gates(g, 3, 0.5), InvalidArgument);
}

TEST(ViewEmbedding, ShapeAndSensitivity) {
  torch::manual_seed(0);
  moe::ViewEmbedding e(12, 32);
  torch::NoGradGuard ng;
  auto d = moe::view_distance(torch::tensor({0.0, 0.0, kPi / 3}), 12);
  auto v = e->forward(d);
  EXPECT_EQ(v.sizes(), (std::vector<std::int64_t>{3, 32}));
  EXPECT_TRUE(torch::equal(v[0], v[1]));
  EXPECT_GT((v[0] - v[2]).norm().item<double>(), 0.0);
}

TEST(ViewMoE, PhaseOneTouchesOnlySelectedExpert) {
  torch::manual_seed(0);
  moe::ViewMoE m(16, 4, 32, 8, 12, 0.5);
  auto anchors = moe::anchor_azimuths(12);
  auto x = torch::randn({2, 5, 16});
  auto v = torch::randn({2, 8});
  m->forward(x, torch::tensor({anchors[4], anchors[4] + 0.1}), v, 1).pow(2).sum().backward();
  for (std::int64_t k = 0; k < 12; ++k)
    for (auto& p : m->expert(k).parameters()) {
      const bool nonzero = p.grad().defined() && p.grad().abs().max().item<double>() > 0.0;
      EXPECT_EQ(nonzero, k == 4) << "expert " << k;
    }
}

TEST(ViewMoE, TiedExpertsEqualOneExpert) {
  torch::manual_seed(0);
  moe::ViewMoE m(16, 4, 32, 8, 12, 0.5);
  moe::tie_experts(m);
  torch::NoGradGuard ng;
  auto x = torch::randn({3, 5, 16});
  auto v = torch::randn({3, 8});
  auto dense = m->expert(0).forward(x, v);
  auto y = m->forward(x, torch::tensor({0.3, 2.0, 5.9}), v, 2);
  EXPECT_LE(((y - dense).abs().max() / dense.abs().max()).item<double>(), 1e-5);
}

TEST(MaskMoE, BackgroundOnlyIsBackgroundExpert) {
  torch::manual_seed(0);
  moe::MaskMoE m(8, 16);
  torch::NoGradGuard ng;
  auto x = torch::randn({2, 8, 4, 4});
  auto masks = torch::zeros({2, 3, 4, 4});
  masks.select(1, 2).fill_(1.0);
  auto y = m->forward(x, masks);
  auto tokens = x.flatten(2).transpose(1, 2);
  auto ref = m->expert(2).forward(tokens).transpose(1, 2).reshape(x.sizes());
  EXPECT_TRUE(torch::equal(y, ref));
}

TEST(MaskMoE, TiedExpertsEqualDense) {
  torch::manual_seed(1);
  moe::MaskMoE m(8, 16);
  moe::tie_experts(m);
  torch::NoGradGuard ng;
  auto x = torch::randn({2, 6, 8});
  auto masks = torch::softmax(torch::randn({2, 6, 3}), 2);
  auto dense = m->expert(0).forward(x);
  EXPECT_LE(((m->forward_tokens(x, masks) - dense).abs().max() / dense.abs().max()).item<double>(), 1e-5);
}

TEST(MaskMoE, GradientStaysInsideItsRegion) {
  torch::manual_seed(2);
  moe::MaskMoE m(8, 16);
  auto x = torch::randn({1, 8, 4, 4});
  auto masks = torch::zeros({1, 3, 4, 4});
  masks.select(1, 0).narrow(1, 0, 2).fill_(1.0);  // top half face
  masks.select(1, 1).narrow(1, 2, 2).fill_(1.0);  // bottom half body
  auto y = m->forward(x, masks);
  // Loss over the bottom half only.
  y.narrow(2, 2, 2).pow(2).sum().backward();
  for (auto& p : m->expert(0).parameters()) EXPECT_EQ(p.grad().abs().max().item<double>(), 0.0);
  double body = 0;
  for (auto& p : m->expert(1).parameters()) body += p.grad().abs().sum().item<double>();
  EXPECT_GT(body, 0.0);
}

TEST(DownsampleMasks, CheckerboardAndUniform) {
  auto masks = torch::zeros({1, 3, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) masks[0][(x + y) % 2][y][x] = 1.0;
  auto d = moe::downsample_masks(masks, 2, 2);
  EXPECT_TRUE(torch::allclose(d.select(1, 0), torch::full({1, 2, 2}, 0.5)));
  EXPECT_TRUE(torch::allclose(d.select(1, 1), torch::full({1, 2, 2}, 0.5)));
  EXPECT_EQ(d.select(1, 2).abs().max().item<double>(), 0.0);
  auto u = moe::downsample_masks(torch::full({1, 3, 8, 8}, 1.0 / 3), 2, 2);
  EXPECT_TRUE(torch::allclose(u, torch::full({1, 3, 2, 2}, 1.0 / 3)));
  auto r = moe::downsample_masks(torch::softmax(torch::randn({2, 3, 16, 16}), 1), 4, 4);
  EXPECT_LE((r.sum(1) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_THROW(moe::downsample_masks(masks, 3, 3), InvalidArgument);
}

TEST(PoseGuider, ZeroRasterAndBackgroundGiveZero) {
  torch::manual_seed(0);
  render::PoseGuider g(4);
  torch::NoGradGuard ng;
  auto raster = (torch::rand({1, 1, 32, 32}) > 0.9).to(torch::kFloat);
  auto fg = torch::ones({1, 1, 4, 4});
  auto out = g->forward(raster, fg);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 4, 4, 4}));
  EXPECT_EQ(out.abs().max().item<double>(), 0.0);  // zero-initialised last layer
  randomize(*g, 3);
  EXPECT_EQ(g->forward(torch::zeros({1, 1, 32, 32}), fg).abs().max().item<double>(), 0.0);
  fg[0][0][1][2] = 0.0;
  out = g->forward(raster, fg);
  EXPECT_EQ(out[0].select(1, 1).select(1, 2).abs().max().item<double>(), 0.0);
  EXPECT_GT(out.abs().max().item<double>(), 0.0);
}

TEST(Renderer, ReferenceLevelsAndDeterminism) {
  torch::manual_seed(0);
  render::RenderModel m(tiny_renderer());
  m->eval();
  torch::NoGradGuard ng;
  auto view = m->view_context(torch::tensor({0.4}), 2);
  auto ref = torch::rand({1, 3, 32, 32}) * 2 - 1;
  auto f1 = m->reference_features(ref, view);
  auto f2 = m->reference_features(ref, view);
  EXPECT_EQ(f1.size(), static_cast<std::size_t>(render::LatentBackbone::Impl::kLevels));
  for (std::size_t i = 0; i < f1.size(); ++i) EXPECT_TRUE(torch::equal(f1[i], f2[i]));
}

TEST(Renderer, RenderMotionFrameCountAndSeed) {
  torch::manual_seed(0);
  render::RenderModel m(tiny_renderer());
  m->eval();
  data::GeneratorConfig g;
  g.height = g.width = 32;
  g.duration_s = 0.4;
  auto s = data::generate_sample(g, 0, 0);
  pipeline::RenderRequest rq;
  rq.motion = s.motion;
  rq.motion.n_frames = 6;
  rq.motion.values.resize(6 * rq.motion.frame_size());
  rq.reference = s.reference;
  rq.mask_source = pipeline::MaskSource::GroundTruth;
  rq.identity_seed = s.identity_seed;
  rq.seed = 5;
  auto a = pipeline::render_motion(m, nullptr, rq);
  auto b = pipeline::render_motion(m, nullptr, rq);
  EXPECT_EQ(a.frames.size(), 6u * 32 * 32 * 3);
  EXPECT_EQ(a.frames, b.frames);
  rq.seed = 6;
  EXPECT_NE(pipeline::render_motion(m, nullptr, rq).frames, a.frames);
  rq.mask_source = pipeline::MaskSource::MaskVae;
  EXPECT_THROW(pipeline::render_motion(m, nullptr, rq), MissingCheckpoint);
}

TEST(Renderer, LossOracleAndZeroModel) {
  auto s = diffusion::NoiseSchedule::linear(100);
  auto gen = make_generator(3);
  auto lat = torch::randn({200, 4, 4, 4}, gen);
  auto t = torch::randint(1, 101, {200}, gen, torch::kLong);
  auto eps = torch::randn(lat.sizes(), gen);
  diffusion::EpsPredictor zero = [](const torch::Tensor& x, const torch::Tensor&) { return torch::zeros_like(x); };
  diffusion::EpsPredictor oracle = [&](const torch::Tensor&, const torch::Tensor&) { return eps; };
  EXPECT_EQ(diffusion::training_loss_at(oracle, s, lat, t, eps).item<double>(), 0.0);
  EXPECT_NEAR(diffusion::training_loss_at(zero, s, lat, t, eps).item<double>(), 1.0, 0.05);
}

TEST(Renderer, IsolationCheckAndAnchorCoverage) {
  torch::manual_seed(0);
  render::RenderModel m(tiny_renderer());
  auto moes = m->view_moes();
  ASSERT_FALSE(moes.empty());
  auto p = moes[0]->expert(3).parameters().front();
  p.mutable_grad() = torch::ones_like(p);
  EXPECT_THROW(render::assert_phase1_isolation(m, 2), InvalidState);
  EXPECT_NO_THROW(render::assert_phase1_isolation(m, 3));

  std::vector<render::RenderClip> clips(2);
  clips[0].expert_index = 0;
  clips[1].expert_index = 2;
  EXPECT_EQ(render::uncovered_anchors(clips, 4), (std::vector<int>{1, 3}));
}

TEST(Foreground, EstimateAndIou) {
  std::vector<std::uint8_t> frames(2 * 2 * 3, 10);
  frames[0] = 200;  // pixel 0 far from the background colour
  auto fg = pipeline::estimate_foreground(frames, 1, 2, 2, {10, 10, 10});
  EXPECT_EQ(fg, (std::vector<std::uint8_t>{1, 0, 0, 0}));
  EXPECT_EQ(pipeline::binary_iou(fg, fg), 1.0);
  EXPECT_EQ(pipeline::binary_iou(fg, {0, 1, 0, 0}), 0.0);
  EXPECT_EQ(pipeline::binary_iou({0, 0}, {0, 0}), 1.0);
}
