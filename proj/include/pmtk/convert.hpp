#pragma once

// Conversions between the plain data records and torch tensors.

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "pmtk/synthetic_data.hpp"

namespace pmtk {

// [N, J * D] float32.
torch::Tensor motion_to_tensor(const data::MotionSequence& motion);
// Accepts [N, J * D] or [N, J, D]; values are copied.
data::MotionSequence tensor_to_motion(const torch::Tensor& t, int fps, int joints = data::kJoints,
                                      int dims = data::kDims);

// [S] float32.
torch::Tensor audio_to_tensor(const data::AudioClip& audio);

// [N, 3, H, W] float32.
torch::Tensor masks_to_tensor(const data::RegionMaskSet& masks);
data::RegionMaskSet tensor_to_masks(const torch::Tensor& t);

// uint8 [N, H, W, 3] -> float [N, 3, H, W] in [-1, 1].
torch::Tensor frames_to_tensor(std::span<const std::uint8_t> frames, std::int64_t n, std::int64_t h, std::int64_t w);
// float [N, 3, H, W] in [-1, 1] -> uint8 [N, H, W, 3].
std::vector<std::uint8_t> tensor_to_frames(const torch::Tensor& t);

// uint8 [N, H, W] (0/255) -> float [N, 1, H, W] in [0, 1].
torch::Tensor skeleton_to_tensor(std::span<const std::uint8_t> skeleton, std::int64_t n, std::int64_t h,
                                 std::int64_t w);

}  // namespace pmtk
