#pragma once

// Plain configuration records shared by the models, the trainers and the
// run-config parser. No torch dependency.

#include <cstdint>
#include <string>
#include <vector>

namespace pmtk {

struct LoRAConfig {
  std::int64_t rank = 4;
  double alpha = 8.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
  void validate() const;
};

struct AudioEncoderConfig {
  std::int64_t channels = 64;
  std::vector<std::int64_t> conv_channels{16, 32, 64, 64};
  std::int64_t kernel = 8;
  std::int64_t stride = 4;
  std::int64_t layers = 2;
  std::int64_t heads = 4;
  bool freeze = false;

  void validate() const;
};

struct MotionCodecConfig {
  std::int64_t pose_dim = 16;
  std::int64_t codebook_size = 128;
  std::int64_t code_dim = 32;
  std::int64_t hidden = 64;
  std::int64_t downsample = 4;
  double beta = 0.25;

  void validate() const;
};

struct BridgeConfig {
  std::int64_t audio_dim = 64;
  std::int64_t width = 128;
  std::int64_t layers = 2;
  std::int64_t heads = 4;
  bool use_lora = true;
  LoRAConfig lora;
  // Feed both M(E_a(a)) and E_a(a) to the encoder; false keeps only the
  // projected stream.
  bool two_argument = true;

  void validate() const;
};

enum class LossNorm { L2Squared, L2 };
enum class DiffusionSpace { Pose, VqLatent };

std::string to_string(LossNorm norm);
LossNorm loss_norm_from_string(const std::string& s);
std::string to_string(DiffusionSpace space);
DiffusionSpace diffusion_space_from_string(const std::string& s);

struct MotionDenoiserConfig {
  std::int64_t input_dim = 16;
  std::int64_t pose_dim = 16;
  std::int64_t width = 128;
  std::int64_t blocks = 4;
  std::int64_t heads = 4;
  std::int64_t z_dim = 128;
  std::int64_t audio_dim = 64;
  // Cross-attend to the enriched features z; false ablates the bridge.
  bool use_bridge = true;
  // Motion frame i cross-attends only to memory frames within this distance
  // (the prefix token sees everything). 0 disables the band.
  std::int64_t cross_radius = 3;

  void validate() const;
};

struct MotionModelConfig {
  AudioEncoderConfig audio;
  BridgeConfig bridge;
  MotionDenoiserConfig denoiser;
  MotionCodecConfig codec;  // used only when space == VqLatent
  std::int64_t diffusion_steps = 100;
  LossNorm loss_norm = LossNorm::L2Squared;
  DiffusionSpace space = DiffusionSpace::Pose;
  int sample_rate = 16000;
  int fps = 25;

  // Propagates shared widths (audio -> bridge -> denoiser) and validates.
  void finalize();
};

struct MaskVaeConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t latent_dim = 64;
  std::int64_t base_channels = 16;
  double kl_weight = 1e-4;
  double identity_pair_rate = 0.25;

  void validate() const;
};

enum class ViewCombine { GatedSum, AttentionOnly };
std::string to_string(ViewCombine c);
ViewCombine view_combine_from_string(const std::string& s);

struct RendererConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t latent_channels = 4;
  std::int64_t ae_channels = 32;
  // Denoiser widths at the full and half latent resolution.
  std::int64_t width_high = 64;
  std::int64_t width_low = 96;
  std::int64_t heads = 4;
  std::int64_t ffn_mult = 2;
  std::int64_t num_views = 12;
  double tau = 0.5;
  std::int64_t view_embed_dim = 64;
  std::int64_t window = 8;
  std::int64_t diffusion_steps = 100;
  ViewCombine view_combine = ViewCombine::GatedSum;
  bool view_moe_in_denoiser = false;
  LossNorm loss_norm = LossNorm::L2Squared;

  std::int64_t latent_height() const { return height / 8; }
  std::int64_t latent_width() const { return width / 8; }
  void validate() const;
};

struct VqTrainConfig {
  std::int64_t steps = 1500;
  std::int64_t batch = 32;
  double lr = 2e-3;
  std::int64_t window = 32;
  std::int64_t dead_code_steps = 200;

  void validate() const;
};

struct MotionTrainConfig {
  std::int64_t steps = 1000;
  std::int64_t batch = 16;
  double lr = 5e-4;
  std::int64_t window = 32;

  void validate() const;
};

struct MaskVaeTrainConfig {
  std::int64_t steps = 600;
  std::int64_t batch = 16;
  double lr = 1e-3;

  void validate() const;
};

struct RendererTrainConfig {
  std::int64_t ae_steps = 800;
  std::int64_t phase1_steps = 1500;
  std::int64_t phase2_steps = 1500;
  std::int64_t batch_windows = 2;
  double ae_lr = 2e-3;
  double lr = 5e-4;
  std::int64_t val_windows = 8;

  void validate() const;
};

}  // namespace pmtk
