#pragma once

// Conditional DDPM over motion: noise schedule, q_sample, epsilon-prediction
// loss, ancestral sampling, the temporal transformer denoiser and the full
// audio -> motion model.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "pmtk/audio_encoder.hpp"
#include "pmtk/configs.hpp"
#include "pmtk/llm_bridge.hpp"
#include "pmtk/motion_codec.hpp"
#include "pmtk/synthetic_data.hpp"
#include "pmtk/train_util.hpp"

namespace pmtk::diffusion {

// Steps are 1-based: beta(1) ... beta(T). alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  // Linear betas from 1e-4 to 0.02, both scaled by 1000 / T.
  static NoiseSchedule linear(std::int64_t steps);
  // Throws InvalidArgument unless 0 < b_1 < ... < b_T < 1.
  static NoiseSchedule from_betas(std::vector<double> betas);

  std::int64_t steps() const { return static_cast<std::int64_t>(betas_.size()); }
  double beta(std::int64_t t) const;
  double alpha(std::int64_t t) const { return 1.0 - beta(t); }
  double alpha_bar(std::int64_t t) const;
  // beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
  double posterior_variance(std::int64_t t) const;

  // Per-row sqrt(alpha_bar_t) and sqrt(1 - alpha_bar_t) for t [B] (int64),
  // shaped [B, 1, ..., 1] to broadcast against `like`.
  std::pair<torch::Tensor, torch::Tensor> coefficients(const torch::Tensor& t, const torch::Tensor& like) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index 0 holds 1
};

// sqrt(ab_t) p0 + sqrt(1 - ab_t) eps. Throws InvalidArgument for t outside
// [1, T] or a shape mismatch.
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& p0, std::int64_t t, const torch::Tensor& eps);
// Batched form, one step per leading row.
torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& p0, const torch::Tensor& t,
                       const torch::Tensor& eps);

// (x_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)
torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& x_t, std::int64_t t,
                         const torch::Tensor& eps_hat);

// eps_theta(x_t, t) with the conditioning already bound. t is int64 [B].
using EpsPredictor = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t)>;

// Squared form: mean of (eps - eps_hat)^2. Plain form: mean over the batch of
// the per-sample RMS error. Both are 1 in expectation for a zero predictor.
torch::Tensor eps_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat, LossNorm norm);

torch::Tensor training_loss_at(const EpsPredictor& model, const NoiseSchedule& schedule, const torch::Tensor& p0,
                               const torch::Tensor& t, const torch::Tensor& eps, LossNorm norm = LossNorm::L2Squared);
// Draws t ~ U{1..T} per row and eps ~ N(0, I).
torch::Tensor training_loss(const EpsPredictor& model, const NoiseSchedule& schedule, const torch::Tensor& p0,
                            torch::Generator& gen, LossNorm norm = LossNorm::L2Squared);

struct SampleOptions {
  // Bounds applied to the x0 estimate at every step and to the output.
  torch::Tensor clamp_low;
  torch::Tensor clamp_high;
};

// Ancestral sampling from x_T ~ N(0, I) down to t = 1.
torch::Tensor ancestral_sample(const EpsPredictor& model, const NoiseSchedule& schedule, at::IntArrayRef shape,
                               torch::Generator& gen, const SampleOptions& options = {});

// Temporal transformer epsilon predictor. The first pose is a prefix token,
// the timestep embedding is added to every token, and every block
// cross-attends to the conditioning memory [z; audio].
class MotionDenoiserImpl : public torch::nn::Module {
 public:
  explicit MotionDenoiserImpl(MotionDenoiserConfig config);

  const MotionDenoiserConfig& config() const { return config_; }

  // x_t [B, L, input_dim], t [B], p1 [B, pose_dim], z [B, N, z_dim] (ignored
  // when the bridge is ablated), audio [B, N, audio_dim]. `stride` is the
  // number of frames per x token, used to align positions with the memory.
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& p1,
                        const torch::Tensor& z, const torch::Tensor& audio, std::int64_t stride = 1);

 private:
  MotionDenoiserConfig config_;
  torch::nn::Linear in_proj_{nullptr}, p1_proj_{nullptr}, z_proj_{nullptr}, audio_proj_{nullptr};
  torch::nn::Sequential time_mlp_{nullptr};
  torch::Tensor memory_type_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm out_norm_{nullptr};
  torch::nn::Linear out_proj_{nullptr};
};
TORCH_MODULE(MotionDenoiser);

struct Conditioning {
  torch::Tensor p1;     // normalised first pose [B, P]
  torch::Tensor z;      // [B, N, C_z] or undefined when the bridge is ablated
  torch::Tensor audio;  // [B, N, C_a]
  std::int64_t n_frames = 0;
};

// Audio encoder + bridge + denoiser, trained jointly on eps-prediction.
// Motion is normalised per coordinate with statistics fixed before training.
class MotionModelImpl : public torch::nn::Module {
 public:
  // `codec` is required when config.space == VqLatent; it stays frozen.
  explicit MotionModelImpl(MotionModelConfig config, codec::MotionCodec codec = nullptr);

  const MotionModelConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  // Per-coordinate mean and scale of the diffusion variable, from full clips.
  void fit_normalization(const std::vector<torch::Tensor>& motions);

  // audio [B, S] raw waveform, p1 [B, P] raw first pose.
  Conditioning condition(const torch::Tensor& audio, const torch::Tensor& p1, std::int64_t n_frames);
  torch::Tensor predict_eps(const torch::Tensor& x_t, const torch::Tensor& t, const Conditioning& cond);

  // Diffusion variable for a raw motion batch [B, N, P] (normalised).
  torch::Tensor to_diffusion_space(const torch::Tensor& motion);
  // Back to raw motion [B, n_frames, P].
  torch::Tensor from_diffusion_space(const torch::Tensor& x, std::int64_t n_frames);

  torch::Tensor loss(const torch::Tensor& motion, const torch::Tensor& audio, torch::Generator& gen);

  // One clip: audio [S], p1 [P] -> raw motion [n_frames, P].
  torch::Tensor sample(const torch::Tensor& audio, const torch::Tensor& p1, std::int64_t n_frames,
                       torch::Generator& gen);
  data::MotionSequence sample(const data::AudioClip& audio, const data::MotionSequence& first_pose,
                              std::int64_t n_frames, std::uint64_t seed);

  // Toggle the bridge adapters (no-op without a bridge).
  void set_lora_attached(bool attached);

  audio::AudioEncoder audio_encoder{nullptr};
  bridge::LlmBridge bridge{nullptr};
  MotionDenoiser denoiser{nullptr};
  codec::MotionCodec codec{nullptr};
  torch::Tensor data_mean, data_scale, pose_mean, pose_scale;

 private:
  std::int64_t stride() const;
  torch::Tensor normalize_pose(const torch::Tensor& p) const { return (p - pose_mean) / pose_scale; }

  MotionModelConfig config_;
  NoiseSchedule schedule_;
};
TORCH_MODULE(MotionModel);

struct MotionClip {
  torch::Tensor motion;  // [N, P]
  torch::Tensor audio;   // [S]
};

// Random aligned (motion window, audio window) pairs.
class ClipWindowSampler {
 public:
  ClipWindowSampler(std::vector<MotionClip> clips, std::int64_t window, std::int64_t samples_per_frame);
  std::pair<torch::Tensor, torch::Tensor> sample(std::int64_t batch, torch::Generator& gen) const;

 private:
  std::vector<MotionClip> clips_;
  std::int64_t window_;
  std::int64_t samples_per_frame_;
};

struct MotionTrainResult {
  std::vector<double> losses;
};

torch::optim::Adam make_motion_optimizer(MotionModel& model, const MotionTrainConfig& config);

// Steps (start_step, config.steps]. NaN losses raise TrainingDivergence.
MotionTrainResult train_motion(MotionModel& model, torch::optim::Adam& optimizer, const std::vector<MotionClip>& clips,
                               const MotionTrainConfig& config, std::uint64_t seed, std::int64_t start_step = 0,
                               const StepCallback& on_step = {});

}  // namespace pmtk::diffusion
