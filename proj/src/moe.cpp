#include "pmtk/moe.hpp"

#include <numbers>

#include "pmtk/error.hpp"

namespace pmtk::moe {

namespace F = torch::nn::functional;

std::vector<double> anchor_azimuths(std::int64_t num_views) {
  if (num_views < 1) throw InvalidArgument("need at least one view anchor");
  std::vector<double> a(static_cast<std::size_t>(num_views));
  for (std::int64_t k = 0; k < num_views; ++k) a[k] = 2.0 * std::numbers::pi * static_cast<double>(k) / num_views;
  return a;
}

torch::Tensor view_distance(const torch::Tensor& azimuth, std::int64_t num_views) {
  auto anchors = torch::tensor(anchor_azimuths(num_views), torch::kDouble);
  auto diff = (azimuth.to(torch::kDouble).reshape({-1, 1}) - anchors.unsqueeze(0)).abs();
  diff = torch::remainder(diff, 2.0 * std::numbers::pi);
  return torch::minimum(diff, 2.0 * std::numbers::pi - diff).to(torch::kFloat);
}

torch::Tensor view_gates(const torch::Tensor& distances, int phase, double tau, ViewCombine combine) {
  if (phase != 1 && phase != 2) throw InvalidArgument("view MoE phase must be 1 or 2, got " + std::to_string(phase));
  if (!(tau > 0.0)) throw InvalidArgument("gate temperature must be positive");
  if (phase == 1) {
    auto idx = distances.argmin(1);
    return F::one_hot(idx, distances.size(1)).to(distances.scalar_type());
  }
  if (combine == ViewCombine::AttentionOnly) return torch::full_like(distances, 1.0 / static_cast<double>(distances.size(1)));
  return torch::softmax(-distances / tau, 1);
}

ViewEmbeddingImpl::ViewEmbeddingImpl(std::int64_t num_views, std::int64_t dim) {
  fc1 = register_module("fc1", torch::nn::Linear(num_views, dim));
  fc2 = register_module("fc2", torch::nn::Linear(dim, dim));
}

torch::Tensor ViewEmbeddingImpl::forward(const torch::Tensor& distances) { return fc2(torch::silu(fc1(distances))); }

ViewExpertImpl::ViewExpertImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden, std::int64_t view_dim) {
  cross_attn = register_module("cross_attn", nn::Attention(dim, heads, view_dim));
  ffn = register_module("ffn", nn::FeedForward(dim, hidden));
  null_token = register_parameter("null_token", torch::randn({view_dim}) * 0.02);
}

torch::Tensor ViewExpertImpl::forward(const torch::Tensor& x, const torch::Tensor& view) {
  auto context = torch::stack({view, null_token.expand_as(view)}, 1);
  return ffn(x + cross_attn(x, context));
}

ViewMoEImpl::ViewMoEImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden, std::int64_t view_dim,
                         std::int64_t num_views, double tau, ViewCombine combine)
    : tau_(tau), combine_(combine) {
  if (!(tau > 0.0)) throw InvalidArgument("gate temperature must be positive");
  experts = register_module("experts", torch::nn::ModuleList());
  for (std::int64_t k = 0; k < num_views; ++k) experts->push_back(ViewExpert(dim, heads, hidden, view_dim));
}

torch::Tensor ViewMoEImpl::forward(const torch::Tensor& x, const torch::Tensor& azimuth, const torch::Tensor& view,
                                   int phase) {
  auto gates = view_gates(view_distance(azimuth, num_experts()), phase, tau_, combine_).to(x.options());
  return combine(x, gates, view);
}

torch::Tensor ViewMoEImpl::combine(const torch::Tensor& x, const torch::Tensor& gates, const torch::Tensor& view) {
  if (gates.dim() != 2 || gates.size(0) != x.size(0) || gates.size(1) != num_experts())
    throw InvalidArgument("view gates must be [B, K]");
  auto active = (gates != 0).any(0);
  torch::Tensor y;
  for (std::int64_t k = 0; k < num_experts(); ++k) {
    if (!active[k].item<bool>()) continue;
    auto out = experts[k]->as<ViewExpertImpl>()->forward(x, view) * gates.select(1, k).view({-1, 1, 1});
    y = y.defined() ? y + out : out;
  }
  return y;
}

torch::Tensor downsample_masks(const torch::Tensor& masks, std::int64_t h, std::int64_t w) {
  if (masks.dim() != 4 || masks.size(1) != 3) throw InvalidArgument("downsample_masks expects [B, 3, H, W]");
  if (h < 1 || w < 1 || masks.size(2) % h != 0 || masks.size(3) % w != 0)
    throw InvalidArgument("downsample_masks: " + std::to_string(h) + "x" + std::to_string(w) + " does not divide " +
                          std::to_string(masks.size(2)) + "x" + std::to_string(masks.size(3)));
  const auto kh = masks.size(2) / h;
  const auto kw = masks.size(3) / w;
  auto pooled = (kh == 1 && kw == 1) ? masks : F::avg_pool2d(masks, F::AvgPool2dFuncOptions({kh, kw}));
  return pooled / pooled.sum(1, true);
}

MaskMoEImpl::MaskMoEImpl(std::int64_t dim, std::int64_t hidden) {
  experts = register_module("experts", torch::nn::ModuleList());
  for (int r = 0; r < 3; ++r) experts->push_back(nn::FeedForward(dim, hidden));
}

torch::Tensor MaskMoEImpl::forward_tokens(const torch::Tensor& x, const torch::Tensor& masks) {
  if (masks.dim() != 3 || masks.size(0) != x.size(0) || masks.size(1) != x.size(1) || masks.size(2) != 3)
    throw InvalidArgument("mask MoE: masks must be [B, L, 3] matching the tokens");
  torch::Tensor y;
  for (int r = 0; r < 3; ++r) {
    auto out = masks.narrow(2, r, 1) * experts[r]->as<nn::FeedForwardImpl>()->forward(x);
    y = y.defined() ? y + out : out;
  }
  return y;
}

torch::Tensor MaskMoEImpl::forward(const torch::Tensor& x, const torch::Tensor& masks) {
  if (x.dim() != 4 || masks.dim() != 4 || masks.size(1) != 3 || masks.size(0) != x.size(0) ||
      masks.size(2) != x.size(2) || masks.size(3) != x.size(3))
    throw InvalidArgument("mask MoE: masks [B, 3, h, w] must match the feature map spatially");
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto tokens = x.flatten(2).transpose(1, 2);
  auto m = masks.flatten(2).transpose(1, 2);
  return forward_tokens(tokens, m).transpose(1, 2).reshape({b, c, h, w});
}

namespace {

void copy_params(torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard guard;
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
}

}  // namespace

void tie_experts(ViewMoE& moe) {
  for (std::int64_t k = 1; k < moe->num_experts(); ++k) copy_params(*moe->experts[0], *moe->experts[k]);
}

void tie_experts(MaskMoE& moe) {
  for (std::size_t r = 1; r < moe->experts->size(); ++r) copy_params(*moe->experts[0], *moe->experts[r]);
}

}  // namespace pmtk::moe
