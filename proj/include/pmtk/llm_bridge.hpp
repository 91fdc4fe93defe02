#pragma once

// Projection network M and the token-stream encoder E_t producing the
// enriched features z = E_t(M(E_a(a)), E_a(a)).

#include <torch/torch.h>

#include <cstdint>

#include "pmtk/configs.hpp"
#include "pmtk/nn.hpp"

namespace pmtk::bridge {

// Per-frame 2-layer ReLU MLP, audio_dim -> width. Biases start at zero.
class ProjectionImpl : public torch::nn::Module {
 public:
  ProjectionImpl(std::int64_t in_dim, std::int64_t width);
  torch::Tensor forward(const torch::Tensor& x);
  // Product of the layer spectral norms, an upper bound on the Lipschitz
  // constant of forward().
  double lipschitz_bound() const;

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Projection);

class LlmBridgeImpl : public torch::nn::Module {
 public:
  explicit LlmBridgeImpl(BridgeConfig config = {});

  const BridgeConfig& config() const { return config_; }

  // audio features [B, N, C_a] -> [B, N, C_z]
  torch::Tensor project(const torch::Tensor& audio_features);
  // projected [B, N, C_z], audio features [B, N, C_a] -> z [B, N, C_z]
  torch::Tensor enrich(const torch::Tensor& projected, const torch::Tensor& audio_features);
  torch::Tensor forward(const torch::Tensor& audio_features) { return enrich(project(audio_features), audio_features); }

  // Adapters on the encoder's query/value projections. Attaching freezes the
  // encoder's base weights; detaching leaves the adapter tensors in place.
  void attach_lora();
  void detach_lora();
  bool lora_attached() const { return lora_attached_; }
  // Encoder parameters that LoRA mode keeps fixed.
  std::vector<torch::Tensor> base_encoder_parameters();

  Projection projection{nullptr};
  torch::nn::Linear audio_lift{nullptr};
  torch::Tensor segment;  // [2, C_z]: 0 projected, 1 audio
  torch::nn::ModuleList encoder;
  torch::nn::LayerNorm out_norm{nullptr};

 private:
  BridgeConfig config_;
  bool lora_attached_ = false;
};
TORCH_MODULE(LlmBridge);

}  // namespace pmtk::bridge
