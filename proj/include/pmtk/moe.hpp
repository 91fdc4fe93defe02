#pragma once

// View-guided and mask-guided mixture-of-experts layers.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "pmtk/configs.hpp"
#include "pmtk/nn.hpp"

namespace pmtk::moe {

// Anchors 2 pi k / K.
std::vector<double> anchor_azimuths(std::int64_t num_views);

// d_k = min(|a - theta_k|, 2 pi - |a - theta_k|). azimuth [B] -> [B, K].
torch::Tensor view_distance(const torch::Tensor& azimuth, std::int64_t num_views);

// Phase 1: one-hot at argmin d (ties to the lowest index). Phase 2:
// softmax(-d / tau). attention_only combines the experts uniformly.
torch::Tensor view_gates(const torch::Tensor& distances, int phase, double tau,
                         ViewCombine combine = ViewCombine::GatedSum);

// 2-layer MLP from the K distances to the view embedding.
class ViewEmbeddingImpl : public torch::nn::Module {
 public:
  ViewEmbeddingImpl(std::int64_t num_views, std::int64_t dim);
  torch::Tensor forward(const torch::Tensor& distances);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(ViewEmbedding);

// FFN_k(x + CrossAttn_k(x, [v, null])).
class ViewExpertImpl : public torch::nn::Module {
 public:
  ViewExpertImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden, std::int64_t view_dim);
  // x [B, L, C], view [B, C_v]
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& view);

  nn::Attention cross_attn{nullptr};
  nn::FeedForward ffn{nullptr};
  torch::Tensor null_token;
};
TORCH_MODULE(ViewExpert);

class ViewMoEImpl : public torch::nn::Module {
 public:
  ViewMoEImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden, std::int64_t view_dim,
              std::int64_t num_views, double tau, ViewCombine combine = ViewCombine::GatedSum);

  // x [B, L, C], azimuth [B] radians, view embedding [B, C_v]. Experts with a
  // zero gate for the whole batch are skipped, so they get no gradient.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& azimuth, const torch::Tensor& view, int phase);
  // Same with precomputed gates [B, K].
  torch::Tensor combine(const torch::Tensor& x, const torch::Tensor& gates, const torch::Tensor& view);

  std::int64_t num_experts() const { return static_cast<std::int64_t>(experts->size()); }
  ViewExpertImpl& expert(std::int64_t k) { return *experts[k]->as<ViewExpertImpl>(); }
  double tau() const { return tau_; }
  ViewCombine combine_rule() const { return combine_; }

  torch::nn::ModuleList experts;

 private:
  double tau_;
  ViewCombine combine_;
};
TORCH_MODULE(ViewMoE);

// Area-average pooling to (h, w) followed by per-pixel renormalisation.
// masks [B, 3, H, W]; H, W must be multiples of h, w.
torch::Tensor downsample_masks(const torch::Tensor& masks, std::int64_t h, std::int64_t w);

// y = sum_r m_r * FFN_r(x) over face, body, background.
class MaskMoEImpl : public torch::nn::Module {
 public:
  MaskMoEImpl(std::int64_t dim, std::int64_t hidden);

  // x [B, C, h, w] feature map, masks [B, 3, h, w].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& masks);
  // Token form: x [B, L, C], masks [B, L, 3].
  torch::Tensor forward_tokens(const torch::Tensor& x, const torch::Tensor& masks);

  nn::FeedForwardImpl& expert(std::int64_t r) { return *experts[r]->as<nn::FeedForwardImpl>(); }

  torch::nn::ModuleList experts;
};
TORCH_MODULE(MaskMoE);

// Copy expert 0's weights into every other expert (dense-equivalence tests).
void tie_experts(ViewMoE& moe);
void tie_experts(MaskMoE& moe);

}  // namespace pmtk::moe
