#include "pmtk/configs.hpp"

#include "pmtk/error.hpp"

namespace pmtk {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace

void LoRAConfig::validate() const {
  require(rank >= 1, "lora rank must be >= 1");
  require(alpha > 0.0, "lora alpha must be positive");
}

void AudioEncoderConfig::validate() const {
  require(channels > 0 && !conv_channels.empty(), "audio encoder needs channels and conv layers");
  require(kernel >= stride && stride >= 1, "audio conv kernel must be >= stride >= 1");
  require(layers >= 1 && heads >= 1 && channels % heads == 0, "audio transformer: channels must divide by heads");
}

void MotionCodecConfig::validate() const {
  require(pose_dim > 0 && codebook_size > 0 && code_dim > 0 && hidden > 0, "codec sizes must be positive");
  require(downsample >= 1 && (downsample & (downsample - 1)) == 0, "codec downsample must be a power of two");
  require(beta >= 0.0, "commitment weight must be >= 0");
}

void BridgeConfig::validate() const {
  require(width > 0 && layers >= 1 && heads >= 1 && width % heads == 0, "bridge width must divide by heads");
  lora.validate();
}

std::string to_string(LossNorm norm) { return norm == LossNorm::L2Squared ? "l2sq" : "l2"; }

LossNorm loss_norm_from_string(const std::string& s) {
  if (s == "l2sq") return LossNorm::L2Squared;
  if (s == "l2") return LossNorm::L2;
  throw InvalidArgument("loss_norm must be l2sq or l2, got '" + s + "'");
}

std::string to_string(DiffusionSpace space) { return space == DiffusionSpace::Pose ? "pose" : "vq_latent"; }

DiffusionSpace diffusion_space_from_string(const std::string& s) {
  if (s == "pose") return DiffusionSpace::Pose;
  if (s == "vq_latent") return DiffusionSpace::VqLatent;
  throw InvalidArgument("space must be pose or vq_latent, got '" + s + "'");
}

std::string to_string(ViewCombine c) { return c == ViewCombine::GatedSum ? "gated_sum" : "attention_only"; }

ViewCombine view_combine_from_string(const std::string& s) {
  if (s == "gated_sum") return ViewCombine::GatedSum;
  if (s == "attention_only") return ViewCombine::AttentionOnly;
  throw InvalidArgument("view_combine must be gated_sum or attention_only, got '" + s + "'");
}

void MotionDenoiserConfig::validate() const {
  require(input_dim > 0 && pose_dim > 0, "denoiser dims must be positive");
  require(width > 0 && blocks >= 1 && heads >= 1 && width % heads == 0, "denoiser width must divide by heads");
  require(cross_radius >= 0, "denoiser cross_radius must be >= 0");
}

void MotionModelConfig::finalize() {
  audio.validate();
  bridge.audio_dim = audio.channels;
  bridge.validate();
  codec.validate();
  denoiser.audio_dim = audio.channels;
  denoiser.z_dim = bridge.width;
  denoiser.pose_dim = codec.pose_dim;
  denoiser.input_dim = space == DiffusionSpace::Pose ? codec.pose_dim : codec.code_dim;
  denoiser.validate();
  require(diffusion_steps >= 2, "diffusion steps must be >= 2");
  require(sample_rate > 0 && fps > 0, "sample_rate and fps must be positive");
}

void MaskVaeConfig::validate() const {
  require(height >= 32 && width >= 32 && height % 8 == 0 && width % 8 == 0, "mask VAE size must be multiples of 8");
  require(latent_dim > 0 && base_channels > 0, "mask VAE sizes must be positive");
  require(kl_weight >= 0.0, "kl_weight must be >= 0");
  require(identity_pair_rate >= 0.0 && identity_pair_rate <= 1.0, "identity_pair_rate must be in [0, 1]");
}

void RendererConfig::validate() const {
  require(height >= 32 && width >= 32 && height % 16 == 0 && width % 16 == 0,
          "renderer size must be >= 32 and a multiple of 16");
  require(latent_channels > 0 && ae_channels > 0, "renderer channels must be positive");
  require(width_high % heads == 0 && width_low % heads == 0, "renderer widths must divide by heads");
  require(num_views >= 1 && tau > 0.0, "renderer needs >= 1 view and tau > 0");
  require(window >= 1 && diffusion_steps >= 2, "renderer window and steps must be positive");
}

void VqTrainConfig::validate() const {
  require(steps >= 0 && batch >= 1 && lr > 0.0 && window >= 1 && dead_code_steps >= 1, "invalid vq train config");
}

void MotionTrainConfig::validate() const {
  require(steps >= 0 && batch >= 1 && lr > 0.0 && window >= 2, "invalid motion train config");
}

void MaskVaeTrainConfig::validate() const { require(steps >= 0 && batch >= 1 && lr > 0.0, "invalid mask VAE train config"); }

void RendererTrainConfig::validate() const {
  require(ae_steps >= 0 && phase1_steps >= 0 && phase2_steps >= 0 && batch_windows >= 1 && lr > 0.0 && ae_lr > 0.0 &&
              val_windows >= 1,
          "invalid renderer train config");
}

}  // namespace pmtk
