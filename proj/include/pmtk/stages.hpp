#pragma once

// Workdir-level orchestration shared by the CLI and the acceptance suite:
// training each stage with checkpoint/resume, loading trained stages,
// sampling videos and evaluation.
//
//   <workdir>/data/                 dataset (gen-data)
//   <workdir>/<stage>/checkpoint.pmtk

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "json.hpp"
#include "pmtk/dataset.hpp"
#include "pmtk/mask_vae.hpp"
#include "pmtk/motion_codec.hpp"
#include "pmtk/motion_diffusion.hpp"
#include "pmtk/pipeline.hpp"
#include "pmtk/renderer.hpp"
#include "pmtk/run_config.hpp"

namespace pmtk::stages {

std::filesystem::path dataset_path(const std::filesystem::path& workdir);
std::filesystem::path checkpoint_path(const std::filesystem::path& workdir, const std::string& stage);

// Opens the dataset, or throws MissingCheckpoint("data", ...).
data::DatasetReader open_dataset(const std::filesystem::path& workdir);

struct StageOptions {
  // Overrides the configured number of steps.
  std::optional<std::int64_t> steps;
  // Also checkpoint every n steps (0: only at the end).
  std::int64_t save_every = 0;
  // Ignore an existing checkpoint.
  bool fresh = false;
  std::function<void(const std::string&)> log;
};

nlohmann::json train_vq_stage(const RunConfig& config, const std::filesystem::path& workdir,
                              const StageOptions& options = {});
nlohmann::json train_motion_stage(const RunConfig& config, const std::filesystem::path& workdir,
                                  const StageOptions& options = {});
nlohmann::json train_mask_vae_stage(const RunConfig& config, const std::filesystem::path& workdir,
                                    const StageOptions& options = {});

enum class RenderPhase { One, Two, Both };
RenderPhase render_phase_from_string(const std::string& s);

// Phase one first trains the latent autoencoder if needed. Phase two
// requires a finished phase one, else MissingCheckpoint("renderer_phase1").
// `options.steps` is ignored; the phase lengths come from the config.
nlohmann::json train_renderer_stage(const RunConfig& config, const std::filesystem::path& workdir, RenderPhase phase,
                                    const StageOptions& options = {});

// Loaders throw MissingCheckpoint when the stage has not been trained and
// ConfigError when it was trained under a different model config.
codec::MotionCodec load_codec(const RunConfig& config, const std::filesystem::path& workdir);
diffusion::MotionModel load_motion(const RunConfig& config, const std::filesystem::path& workdir);
maskvae::MaskVae load_mask_vae(const RunConfig& config, const std::filesystem::path& workdir);
render::RenderModel load_renderer(const RunConfig& config, const std::filesystem::path& workdir);

// Reference bundle for a reference image. Next to a dataset reference.png
// the stored masks, skeleton and first pose are used. Otherwise the pose is
// the motion model's mean pose, and the masks come from the foreground
// (distance from the corner colour) split into a face disc around the head.
struct ReferenceInput {
  data::Reference reference;
  data::MotionSequence first_pose;  // one frame
  std::array<std::uint8_t, 3> background{};
};
ReferenceInput load_reference(const std::filesystem::path& png, const diffusion::MotionModel& motion, int height,
                              int width);

struct SampleRequest {
  data::AudioClip audio;
  std::filesystem::path reference_png;
  double azimuth_deg = 0.0;
  // 0: as many frames as the audio covers.
  std::int64_t frames = 0;
  pipeline::MaskSource mask_source = pipeline::MaskSource::MaskVae;
  std::uint64_t seed = 0;
};

struct SampleResult {
  data::MotionSequence motion;
  pipeline::RenderResult video;
};

// Checks every required checkpoint before doing any work.
SampleResult sample_video(const RunConfig& config, const std::filesystem::path& workdir,
                          const SampleRequest& request);

// Writes frames/%05d.png, motion.tnsr and masks.tnsr under `out`.
void write_sample(const SampleResult& result, const std::filesystem::path& out);

// Metrics for every trained stage on the validation split. Throws
// MissingCheckpoint when no stage has been trained.
nlohmann::json evaluate(const RunConfig& config, const std::filesystem::path& workdir,
                        const std::function<void(const std::string&)>& log = {});

}  // namespace pmtk::stages
