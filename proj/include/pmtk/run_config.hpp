#pragma once

// Versioned JSON run configuration. Every stage section is optional and
// falls back to the desk defaults; unknown keys and ill-typed values are
// rejected with the dotted path of the offending field.

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "pmtk/configs.hpp"
#include "pmtk/synthetic_data.hpp"

namespace pmtk {

inline constexpr int kRunConfigSchemaVersion = 1;

struct MetricsConfig {
  // Clips drawn from the validation split for eval.
  std::int64_t eval_clips = 8;
  std::int64_t diversity_pairs = 64;
  // Frames rendered by `sample` when no length is given.
  std::int64_t sample_frames = 16;

  void validate() const;
};

struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  data::GeneratorConfig data;
  AudioEncoderConfig audio;
  MotionCodecConfig vq;
  VqTrainConfig vq_train;
  BridgeConfig bridge;
  MotionDenoiserConfig denoiser;
  std::int64_t motion_diffusion_steps = 100;
  LossNorm motion_loss_norm = LossNorm::L2Squared;
  DiffusionSpace motion_space = DiffusionSpace::Pose;
  MotionTrainConfig motion_train;
  MaskVaeConfig mask_vae;
  MaskVaeTrainConfig mask_vae_train;
  RendererConfig renderer;
  RendererTrainConfig renderer_train;
  MetricsConfig metrics;

  // Throws ConfigError(field, ...) on unknown keys, wrong types, a schema
  // version mismatch or values that fail validation.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Copies image size, view count and pose width from `data` into the
  // model sections. from_json() calls this.
  void sync_shapes();

  // Cross-section consistency (image sizes, pose width, view count).
  void validate() const;

  MotionModelConfig motion_model() const;

  // FNV-1a of the canonical JSON of everything that shapes a stage's model
  // (training schedules excluded, so a run can be extended and resumed).
  std::string stage_hash(const std::string& stage) const;
  // Hash of the full canonical config.
  std::string hash() const;

  // Per-stage seed derived from the global seed.
  std::uint64_t stage_seed(const std::string& stage) const;
};

// Stage tags used for checkpoints and output folders.
namespace stage {
inline constexpr const char* kVq = "vq";
inline constexpr const char* kMotion = "motion";
inline constexpr const char* kMaskVae = "mask_vae";
inline constexpr const char* kRenderer = "renderer";
}  // namespace stage

}  // namespace pmtk
