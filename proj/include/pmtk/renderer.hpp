#pragma once

// Motion -> frames: a small latent autoencoder, the pose guider, a reference
// network with view-guided experts and a latent denoiser whose feed-forward
// sublayers are mask-guided experts.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "pmtk/configs.hpp"
#include "pmtk/motion_diffusion.hpp"
#include "pmtk/moe.hpp"
#include "pmtk/nn.hpp"
#include "pmtk/train_util.hpp"

namespace pmtk::render {

// Deterministic conv autoencoder with 8x spatial downsampling. Latents are
// multiplied by `latent_scale` so they have roughly unit variance.
class LatentAutoencoderImpl : public torch::nn::Module {
 public:
  LatentAutoencoderImpl(std::int64_t channels, std::int64_t latent_channels);

  torch::Tensor encode(const torch::Tensor& images);   // [B, 3, H, W] -> [B, C, H/8, W/8]
  torch::Tensor decode(const torch::Tensor& latents);  // -> [B, 3, H, W]
  torch::Tensor reconstruct(const torch::Tensor& images) { return decode(encode(images)); }
  // Sets latent_scale to 1 / std of the unscaled latents of `images`.
  void fit_scale(const torch::Tensor& images);

  torch::Tensor latent_scale;

 private:
  torch::nn::Sequential encoder_{nullptr}, decoder_{nullptr};
};
TORCH_MODULE(LatentAutoencoder);

// Four convolutions from the pose raster to latent resolution. No biases and
// a zero-initialised last layer, so an empty raster always maps to zero.
class PoseGuiderImpl : public torch::nn::Module {
 public:
  explicit PoseGuiderImpl(std::int64_t latent_channels);
  // raster [B, 1, H, W], foreground [B, 1, h, w] -> [B, C, h, w]
  torch::Tensor forward(const torch::Tensor& raster, const torch::Tensor& foreground);

 private:
  torch::nn::Sequential convs_{nullptr};
};
TORCH_MODULE(PoseGuider);

// View conditioning shared by the reference network (and optionally the
// denoiser): gates [B, K] and embedding [B, C_v].
struct ViewContext {
  torch::Tensor gates;
  torch::Tensor embedding;
};

enum class BlockKind { Denoiser, Reference };

class RenderBlockImpl : public torch::nn::Module {
 public:
  RenderBlockImpl(BlockKind kind, std::int64_t dim, const RendererConfig& config, bool temporal);

  // Reference blocks: x [B, L, C]; `record` receives the normalised tokens
  // that the denoiser attends to.
  torch::Tensor forward_reference(const torch::Tensor& x, const ViewContext& view, torch::Tensor* record);
  // Denoiser blocks: x [B*F, L, C], temb [B*F, C], ref [B*F, L_r, C],
  // masks [B*F, L, 3].
  torch::Tensor forward_denoiser(const torch::Tensor& x, const torch::Tensor& temb, const torch::Tensor& ref,
                                 const torch::Tensor& masks, std::int64_t frames, const ViewContext& view);

  moe::ViewMoE view_moe{nullptr};
  moe::MaskMoE mask_moe{nullptr};

 private:
  BlockKind kind_;
  bool temporal_;
  torch::nn::LayerNorm norm1_{nullptr}, norm_t_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
  nn::Attention self_attn_{nullptr}, temporal_attn_{nullptr};
};
TORCH_MODULE(RenderBlock);

// Shared three-level layout: full latent resolution, half resolution, full
// resolution with a skip connection.
class LatentBackboneImpl : public torch::nn::Module {
 public:
  LatentBackboneImpl(BlockKind kind, const RendererConfig& config);

  static constexpr int kLevels = 3;

  // Reference pass: latents [B, C, h, w] -> one feature set per level.
  std::vector<torch::Tensor> reference_features(const torch::Tensor& latents, const ViewContext& view);
  // Denoiser pass: x [B, F, C, h, w] -> eps [B, F, C, h, w].
  torch::Tensor denoise(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& masks,
                        const std::vector<torch::Tensor>& reference, const ViewContext& view);

  std::vector<moe::ViewMoE> view_moes() const;

 private:
  torch::Tensor to_map(const torch::Tensor& tokens, std::int64_t h, std::int64_t w) const;

  BlockKind kind_;
  RendererConfig config_;
  torch::nn::Linear in_proj_{nullptr};
  torch::nn::Conv2d down_{nullptr};
  torch::nn::ConvTranspose2d up_{nullptr};
  torch::nn::Linear merge_{nullptr};
  std::vector<RenderBlock> blocks_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Linear time_low_{nullptr};
  torch::nn::LayerNorm out_norm_{nullptr};
  torch::nn::Linear out_proj_{nullptr};
};
TORCH_MODULE(LatentBackbone);

// One training/sampling window. Frames in [-1, 1].
struct RenderBatch {
  torch::Tensor frames;     // [B, F, 3, H, W]
  torch::Tensor skeleton;   // [B, F, 1, H, W]
  torch::Tensor masks;      // [B, F, 3, H, W]
  torch::Tensor reference;  // [B, 3, H, W]
  torch::Tensor azimuth;    // [B]
};

class RenderModelImpl : public torch::nn::Module {
 public:
  explicit RenderModelImpl(RendererConfig config = {});

  const RendererConfig& config() const { return config_; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }

  ViewContext view_context(const torch::Tensor& azimuth, int phase);
  std::vector<torch::Tensor> reference_features(const torch::Tensor& reference, const ViewContext& view);
  // Pose guidance added to the noisy latents. skeleton [N, 1, H, W], masks
  // [N, 3, H, W] at image resolution.
  torch::Tensor guidance(const torch::Tensor& skeleton, const torch::Tensor& masks);

  // eps_theta(x_t, p, m, v, t): x_t [B, F, C, h, w], t [B].
  torch::Tensor predict_eps(const torch::Tensor& x_t, const torch::Tensor& t, const RenderBatch& batch,
                            const std::vector<torch::Tensor>& reference, const ViewContext& view);

  torch::Tensor latents_of(const torch::Tensor& frames);  // [B, F, 3, H, W] -> [B, F, C, h, w]

  torch::Tensor loss_at(const RenderBatch& batch, int phase, const torch::Tensor& t, const torch::Tensor& eps);
  torch::Tensor loss(const RenderBatch& batch, int phase, torch::Generator& gen);

  // Ancestral sampling of one batch of windows; returns frames [B, F, 3, H, W].
  torch::Tensor sample(const RenderBatch& conditioning, torch::Generator& gen, int phase = 2);

  // Every view MoE in the model (reference network, plus the denoiser when
  // configured).
  std::vector<moe::ViewMoE> view_moes() const;

  LatentAutoencoder autoencoder{nullptr};
  PoseGuider pose_guider{nullptr};
  moe::ViewEmbedding view_embedding{nullptr};
  LatentBackbone reference_net{nullptr};
  LatentBackbone denoiser{nullptr};

 private:
  RendererConfig config_;
  diffusion::NoiseSchedule schedule_;
};
TORCH_MODULE(RenderModel);

// Per-clip training material at image resolution.
struct RenderClip {
  torch::Tensor frames;     // [N, 3, H, W] in [-1, 1]
  torch::Tensor skeleton;   // [N, 1, H, W]
  torch::Tensor masks;      // [N, 3, H, W]
  torch::Tensor reference;  // [3, H, W]
  double azimuth = 0.0;
  int expert_index = 0;
};

// Random windows of `window` frames from `clips` (restricted to `subset` if
// non-empty).
RenderBatch sample_windows(const std::vector<RenderClip>& clips, const std::vector<std::size_t>& subset,
                           std::int64_t batch, std::int64_t window, torch::Generator& gen);

// Anchors in [0, K) without any clip; empty when every anchor is covered.
std::vector<int> uncovered_anchors(const std::vector<RenderClip>& clips, std::int64_t num_views);

// Throws InvalidState naming the expert when any view expert other than
// `selected` has a non-zero gradient.
void assert_phase1_isolation(RenderModel& model, int selected);

struct PhaseResult {
  std::vector<double> losses;
  std::int64_t isolation_checks = 0;
};

torch::optim::Adam make_autoencoder_optimizer(RenderModel& model, const RendererTrainConfig& config);
// Everything but the autoencoder.
torch::optim::Adam make_render_optimizer(RenderModel& model, const RendererTrainConfig& config);

// Plain reconstruction training of the latent autoencoder, then fits its
// latent scale on a sample of training frames.
PhaseResult train_autoencoder(RenderModel& model, torch::optim::Adam& optimizer, const std::vector<RenderClip>& clips,
                              const RendererTrainConfig& config, std::uint64_t seed, std::int64_t start_step = 0,
                              const StepCallback& on_step = {});

// Phase 1 cycles through the anchors, one anchor per batch, with one-hot
// gating and checks expert isolation after every backward pass. Phase 2
// uses soft gating over all data. Steps (start_step, steps]. Throws
// ConfigError listing uncovered anchors before phase 1.
PhaseResult train_render_phase(RenderModel& model, torch::optim::Adam& optimizer, const std::vector<RenderClip>& clips,
                               int phase, std::int64_t steps, const RendererTrainConfig& config, std::uint64_t seed,
                               std::int64_t start_step = 0, const StepCallback& on_step = {});

// Loss over a fixed set of windows, timesteps and noise drawn from `seed`.
double validation_loss(RenderModel& model, const std::vector<RenderClip>& clips, int phase,
                       const RendererTrainConfig& config, std::uint64_t seed);

}  // namespace pmtk::render
