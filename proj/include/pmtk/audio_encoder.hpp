#pragma once

// Frame-aligned contextual audio features: a strided 1-D convolution stack
// followed by a transformer encoder, resampled to the motion frame rate.

#include <torch/torch.h>

#include <cstdint>

#include "pmtk/configs.hpp"
#include "pmtk/nn.hpp"
#include "pmtk/synthetic_data.hpp"

namespace pmtk::audio {

// Start-aligned linear resampling along time: output row i reads source
// position i * L / target (clamped to L - 1). seq is [B, L, C].
torch::Tensor resample_time(const torch::Tensor& seq, std::int64_t target);

class AudioEncoderImpl : public torch::nn::Module {
 public:
  explicit AudioEncoderImpl(AudioEncoderConfig config = {});

  // Shortest input that yields one conv output.
  std::int64_t receptive_field() const;
  // Samples per conv output step.
  std::int64_t hop() const;
  std::int64_t channels() const { return config_.channels; }
  const AudioEncoderConfig& config() const { return config_; }

  // audio [B, S] -> features [B, target_frames, C].
  torch::Tensor forward(const torch::Tensor& audio, std::int64_t target_frames);

  // Single clip convenience: [target_frames, C].
  torch::Tensor extract_features(const data::AudioClip& clip, std::int64_t target_frames);

  void set_frozen(bool frozen);

 private:
  AudioEncoderConfig config_;
  torch::nn::ModuleList convs_;
  torch::nn::ModuleList conv_norms_;
  torch::nn::Linear in_proj_{nullptr};
  torch::Tensor position_gate_;
  torch::nn::ModuleList blocks_;
  torch::nn::LayerNorm out_norm_{nullptr};
};
TORCH_MODULE(AudioEncoder);

}  // namespace pmtk::audio
