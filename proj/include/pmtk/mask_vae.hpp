#pragma once

// Skeleton-conditioned region-mask predictor: a variational mask encoder
// E_m, a deterministic skeleton encoder E_p and one decoder,
// m_j = D(E_m(m_i), E_p(p_i), E_p(p_j)).

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "pmtk/configs.hpp"
#include "pmtk/train_util.hpp"

namespace pmtk::maskvae {

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar) over the last axis, averaged
// over any leading axes.
torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& logvar);

struct MaskLatent {
  torch::Tensor mu;
  torch::Tensor logvar;
  torch::Tensor sample;  // reparameterised draw, or mu at inference
};

// Conv stack to the 8x8 bottleneck (stride-2 stages), keeping every stage's
// feature map.
class ConvEncoderImpl : public torch::nn::Module {
 public:
  ConvEncoderImpl(std::int64_t in_channels, std::int64_t base, std::int64_t height, std::int64_t width,
                  std::int64_t out_dim);
  // Returns the flattened projection; `features` (if given) receives the
  // stage outputs, finest first.
  torch::Tensor forward(const torch::Tensor& x, std::vector<torch::Tensor>* features = nullptr);

  std::vector<std::int64_t> stage_channels() const { return channels_; }

 private:
  torch::nn::ModuleList stages_;
  torch::nn::Linear head_{nullptr};
  std::vector<std::int64_t> channels_;
};
TORCH_MODULE(ConvEncoder);

class MaskVaeImpl : public torch::nn::Module {
 public:
  explicit MaskVaeImpl(MaskVaeConfig config = {});

  const MaskVaeConfig& config() const { return config_; }

  // masks [B, 3, H, W]. Samples with the reparameterisation trick when a
  // generator is given, otherwise returns mu as the sample.
  MaskLatent encode_mask(const torch::Tensor& masks, torch::Generator* gen = nullptr);
  // skeleton [B, 1, H, W] in [0, 1] -> [B, C_m]
  torch::Tensor encode_skeleton(const torch::Tensor& skeleton);

  // Decoder output for latent code c_m and skeletons p_i, p_j: [B, 3, H, W]
  // with channels summing to 1.
  torch::Tensor decode(const torch::Tensor& mask_code, const torch::Tensor& skeleton_i,
                       const torch::Tensor& skeleton_j);

  // Deterministic prediction (mu path).
  torch::Tensor predict_mask(const torch::Tensor& masks_i, const torch::Tensor& skeleton_i,
                             const torch::Tensor& skeleton_j);

  struct Loss {
    torch::Tensor rec;
    torch::Tensor kl;
    torch::Tensor total;
  };
  Loss loss(const torch::Tensor& masks_i, const torch::Tensor& skeleton_i, const torch::Tensor& skeleton_j,
            const torch::Tensor& masks_j, torch::Generator& gen);

 private:
  void check_size(const torch::Tensor& t, std::int64_t channels, const char* what) const;
  torch::Tensor norm(std::size_t i, const torch::Tensor& x);

  MaskVaeConfig config_;
  ConvEncoder mask_encoder_{nullptr};
  torch::nn::Linear logvar_head_{nullptr};
  ConvEncoder skeleton_encoder_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
  torch::nn::ModuleList up_;
  torch::nn::ModuleList merge_;
  torch::nn::ModuleList norms_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(MaskVae);

// rec + kl_weight * kl.
torch::Tensor mask_vae_total(const torch::Tensor& rec, const torch::Tensor& kl, double kl_weight);

struct MaskClip {
  torch::Tensor masks;               // [N, 3, H, W]
  torch::Tensor skeleton;            // [N, 1, H, W]
  torch::Tensor reference_masks;     // [1, 3, H, W]
  torch::Tensor reference_skeleton;  // [1, 1, H, W]
};

struct PairBatch {
  torch::Tensor masks_i, skeleton_i, skeleton_j, masks_j;
};

// Training pairs: i = j with probability `identity_rate`; otherwise the
// source is another frame of the same clip or the clip's reference frame,
// with equal probability.
PairBatch sample_pairs(const std::vector<MaskClip>& clips, std::int64_t batch, double identity_rate,
                       torch::Generator& gen);

struct MaskVaeTrainResult {
  std::vector<double> losses;
};

torch::optim::Adam make_mask_vae_optimizer(MaskVae& model, const MaskVaeTrainConfig& config);

MaskVaeTrainResult train_mask_vae(MaskVae& model, torch::optim::Adam& optimizer, const std::vector<MaskClip>& clips,
                                  const MaskVaeTrainConfig& config, std::uint64_t seed, std::int64_t start_step = 0,
                                  const StepCallback& on_step = {});

}  // namespace pmtk::maskvae
