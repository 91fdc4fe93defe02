#pragma once

// Glue between dataset samples and the trainers, and the motion -> frames
// inference path.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

#include "pmtk/mask_vae.hpp"
#include "pmtk/motion_diffusion.hpp"
#include "pmtk/renderer.hpp"
#include "pmtk/synthetic_data.hpp"

namespace pmtk::pipeline {

diffusion::MotionClip motion_clip(const data::Sample& sample);
maskvae::MaskClip mask_clip(const data::Sample& sample);
render::RenderClip render_clip(const data::Sample& sample);

enum class MaskSource { GroundTruth, MaskVae };
std::string to_string(MaskSource source);
MaskSource mask_source_from_string(const std::string& s);

// Masks for every frame of `skeleton` ([N, 1, H, W]) predicted from the
// reference bundle.
torch::Tensor predict_masks(maskvae::MaskVae& vae, const data::Reference& reference, const torch::Tensor& skeleton,
                            int height, int width);

struct RenderRequest {
  data::MotionSequence motion;
  data::Reference reference;  // image, masks and skeleton at azimuth 0
  double azimuth = 0.0;
  MaskSource mask_source = MaskSource::MaskVae;
  // Needed only for ground-truth masks.
  std::uint64_t identity_seed = 0;
  std::uint64_t seed = 0;
};

struct RenderResult {
  std::vector<std::uint8_t> frames;  // N x H x W x 3
  data::RegionMaskSet masks;         // masks used for guidance
  std::vector<std::uint8_t> skeleton;
  int height = 0;
  int width = 0;
};

// Rasterises the motion, gets masks from the requested source, and samples
// windows of the renderer's window length. `vae` may be null unless the
// mask source is MaskVae, in which case MissingCheckpoint is thrown.
RenderResult render_motion(render::RenderModel& model, maskvae::MaskVae* vae, const RenderRequest& request);

// Foreground of rendered frames: pixels farther than `tolerance` (0-255
// L-infinity) from the background colour. N x H x W, 1 = foreground.
std::vector<std::uint8_t> estimate_foreground(const std::vector<std::uint8_t>& frames, std::int64_t n, int height,
                                              int width, const std::array<std::uint8_t, 3>& background,
                                              int tolerance = 48);

// Foreground IoU of binary maps (empty union counts as 1).
double binary_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

}  // namespace pmtk::pipeline
