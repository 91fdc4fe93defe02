#include <gtest/gtest.h>

#include <torch/torch.h>

#include "pmtk/llm_bridge.hpp"
#include "pmtk/nn.hpp"

using namespace pmtk;

TEST(Projection, ZeroInZeroOutAndShape) {
  torch::manual_seed(0);
  bridge::Projection m(64, 128);
  torch::NoGradGuard ng;
  EXPECT_EQ(m->forward(torch::zeros({1, 10, 64})).abs().max().item<double>(), 0.0);
  EXPECT_EQ(m->forward(torch::randn({1, 7, 64})).sizes(), (std::vector<std::int64_t>{1, 7, 128}));
}

TEST(Projection, LipschitzBoundHolds) {
  torch::manual_seed(1);
  bridge::Projection m(64, 128);
  torch::NoGradGuard ng;
  // Independent bound: spectral norms from an SVD of each weight.
  auto s1 = torch::linalg_svdvals(m->fc1->weight.to(torch::kDouble)).max().item<double>();
  auto s2 = torch::linalg_svdvals(m->fc2->weight.to(torch::kDouble)).max().item<double>();
  EXPECT_NEAR(m->lipschitz_bound(), s1 * s2, 1e-3 * s1 * s2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = torch::randn({1, 1, 64});
    auto d = torch::randn({1, 1, 64}) * 0.1;
    auto lhs = (m->forward(x + d) - m->forward(x)).norm().item<double>();
    EXPECT_LE(lhs, s1 * s2 * d.norm().item<double>() * (1 + 1e-5));
  }
}

TEST(Bridge, OutputShapeForAnyLength) {
  torch::manual_seed(0);
  bridge::LlmBridge b;
  torch::NoGradGuard ng;
  for (std::int64_t n : {1, 5, 40}) {
    auto z = b->forward(torch::randn({2, n, 64}));
    EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{2, n, 128}));
  }
}

TEST(Bridge, SwappingTokensChangesOutput) {
  torch::manual_seed(0);
  bridge::LlmBridge b;
  torch::NoGradGuard ng;
  auto a = torch::randn({1, 6, 64});
  auto p = b->project(a);
  auto z = b->enrich(p, a);
  auto p2 = p.clone();
  p2[0][1] = p[0][4];
  p2[0][4] = p[0][1];
  auto z2 = b->enrich(p2, a);
  // Undo the swap on the output; any residual comes from position awareness.
  auto back = z2.clone();
  back[0][1] = z2[0][4];
  back[0][4] = z2[0][1];
  EXPECT_GT((z2 - z).abs().max().item<double>(), 0.0);
  EXPECT_GT((back - z).abs().max().item<double>(), 0.0);
}

TEST(Lora, ZeroInitAttachIsExactNoOp) {
  torch::manual_seed(0);
  BridgeConfig cfg;
  cfg.use_lora = false;
  bridge::LlmBridge b(cfg);
  torch::NoGradGuard ng;
  auto a = torch::randn({2, 9, 64});
  auto before = b->forward(a);
  b->attach_lora();
  EXPECT_TRUE(b->lora_attached());
  EXPECT_TRUE(torch::equal(b->forward(a), before));
  b->detach_lora();
  EXPECT_TRUE(torch::equal(b->forward(a), before));
}

TEST(Lora, EffectiveWeightHandExample) {
  auto w = torch::arange(12, torch::kFloat32).view({3, 4});
  auto a = torch::tensor({1.0f, 0.0f, 0.0f, 0.0f}).view({1, 4});
  auto bm = torch::tensor({1.0f, 0.0f, 0.0f}).view({3, 1});
  LoRAConfig cfg;
  cfg.rank = 1;
  cfg.alpha = 1.0;
  auto eff = nn::apply_lora(w, a, bm, cfg);
  auto expect = w.clone();
  expect[0][0] += 1.0f;
  EXPECT_TRUE(torch::equal(eff, expect));
}

TEST(Lora, OnlyAdaptersReceiveGradient) {
  torch::manual_seed(2);
  bridge::LlmBridge b;
  ASSERT_TRUE(b->lora_attached());
  {
    torch::NoGradGuard ng;
    for (auto& p : b->named_parameters())
      if (p.key().find("lora_b") != std::string::npos) p.value().normal_(0.0, 0.1);
  }
  auto a = torch::randn({2, 8, 64});
  b->forward(a).pow(2).sum().backward();
  int adapters = 0;
  for (auto& p : b->encoder->named_parameters()) {
    const bool lora = p.key().find("lora_") != std::string::npos;
    const auto& g = p.value().grad();
    if (lora) {
      ++adapters;
      ASSERT_TRUE(g.defined()) << p.key();
      EXPECT_GT(g.abs().max().item<double>(), 0.0) << p.key();
    } else {
      EXPECT_TRUE(!g.defined() || g.abs().max().item<double>() == 0.0) << p.key();
    }
  }
  EXPECT_GT(adapters, 0);
}
