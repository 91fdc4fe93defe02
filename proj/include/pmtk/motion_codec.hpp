#pragma once

// VQ-VAE over motion sequences: temporal conv encoder, finite codebook with
// nearest-entry lookup, transposed-conv decoder.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "pmtk/configs.hpp"
#include "pmtk/synthetic_data.hpp"
#include "pmtk/train_util.hpp"

namespace pmtk::codec {

struct QuantizedLatent {
  torch::Tensor indices;  // [..., M] int64
  torch::Tensor vectors;  // [..., M, C_q], rows of the codebook
  std::int64_t downsample_factor = 4;
};

// Nearest codebook entry per row of `latents` ([..., C_q]); ties go to the
// lowest index. Throws InvalidState for an empty codebook.
QuantizedLatent quantize(const torch::Tensor& latents, const torch::Tensor& codebook);

struct VqLoss {
  torch::Tensor recon;
  torch::Tensor codebook;
  torch::Tensor commitment;
  torch::Tensor total() const { return recon + codebook + commitment; }
};

// recon = MSE(reconstruction, motion); codebook = MSE(e, sg(z_e));
// commitment = beta * MSE(z_e, sg(e)).
VqLoss vq_loss(const torch::Tensor& motion, const torch::Tensor& reconstruction, const torch::Tensor& latents,
               const torch::Tensor& quantized, double beta);

// z_e + sg(e - z_e): forward value e, gradient passes straight to z_e.
torch::Tensor straight_through(const torch::Tensor& latents, const torch::Tensor& quantized);

class MotionCodecImpl : public torch::nn::Module {
 public:
  explicit MotionCodecImpl(MotionCodecConfig config = {});

  const MotionCodecConfig& config() const { return config_; }
  std::int64_t factor() const { return config_.downsample; }

  // motion [B, N, P] -> continuous latents [B, ceil(N / factor), C_q].
  torch::Tensor encode(const torch::Tensor& motion);
  QuantizedLatent quantize(const torch::Tensor& latents) const;
  // vectors [B, M, C_q] -> motion [B, target_frames, P].
  torch::Tensor decode(const torch::Tensor& vectors, std::int64_t target_frames);
  torch::Tensor decode(const QuantizedLatent& q, std::int64_t target_frames) { return decode(q.vectors, target_frames); }

  struct Output {
    torch::Tensor latents;
    QuantizedLatent quantized;
    torch::Tensor reconstruction;
  };
  // Encode, quantize with the straight-through estimator, decode.
  Output forward(const torch::Tensor& motion);

  // Mean-pooled pre-quantization latents, [B, C_q]; the motion feature
  // space for Frechet distances.
  torch::Tensor features(const torch::Tensor& motion);

  // Convenience for single sequences.
  data::MotionSequence reconstruct(const data::MotionSequence& motion);

  torch::Tensor codebook;
  // Last training step at which each entry was selected.
  torch::Tensor last_used;

 private:
  MotionCodecConfig config_;
  torch::nn::Conv1d enc_in_{nullptr}, enc_out_{nullptr};
  torch::nn::ModuleList enc_down_;
  torch::nn::Conv1d dec_in_{nullptr}, dec_out_{nullptr};
  torch::nn::ModuleList dec_up_;
};
TORCH_MODULE(MotionCodec);

// Random fixed-length windows drawn from a pool of sequences.
class WindowSampler {
 public:
  WindowSampler(std::vector<torch::Tensor> sequences, std::int64_t window);
  // [batch, window, P]
  torch::Tensor sample(std::int64_t batch, torch::Generator& gen) const;
  std::int64_t window() const { return window_; }

 private:
  std::vector<torch::Tensor> sequences_;
  std::int64_t window_;
};

struct VqTrainResult {
  std::vector<double> losses;
  std::int64_t reinitialized_codes = 0;
};

// Adam on recon + codebook + commitment. Entries unused for
// `dead_code_steps` are re-seeded from current encoder outputs. Runs steps
// (start_step, config.steps]; `optimizer` may carry resumed state.
VqTrainResult train_vq(MotionCodec& codec, torch::optim::Adam& optimizer, const std::vector<torch::Tensor>& motions,
                       const VqTrainConfig& config, std::uint64_t seed, std::int64_t start_step = 0,
                       const StepCallback& on_step = {});

torch::optim::Adam make_vq_optimizer(MotionCodec& codec, const VqTrainConfig& config);

}  // namespace pmtk::codec
