#include "pmtk/convert.hpp"

#include "pmtk/error.hpp"

namespace pmtk {

torch::Tensor motion_to_tensor(const data::MotionSequence& motion) {
  return torch::from_blob(const_cast<float*>(motion.values.data()),
                          {motion.n_frames, static_cast<std::int64_t>(motion.frame_size())}, torch::kFloat)
      .clone();
}

data::MotionSequence tensor_to_motion(const torch::Tensor& t, int fps, int joints, int dims) {
  auto c = t.detach().to(torch::kFloat).contiguous().reshape({t.size(0), -1});
  if (c.size(1) != static_cast<std::int64_t>(joints) * dims)
    throw InvalidArgument("tensor_to_motion: feature size does not match joints x dims");
  data::MotionSequence m(c.size(0), fps, joints, dims);
  std::memcpy(m.values.data(), c.data_ptr<float>(), m.values.size() * sizeof(float));
  return m;
}

torch::Tensor audio_to_tensor(const data::AudioClip& audio) {
  return torch::from_blob(const_cast<float*>(audio.samples.data()), {static_cast<std::int64_t>(audio.samples.size())},
                          torch::kFloat)
      .clone();
}

torch::Tensor masks_to_tensor(const data::RegionMaskSet& masks) {
  return torch::from_blob(const_cast<float*>(masks.values.data()), {masks.n_frames, 3, masks.height, masks.width},
                          torch::kFloat)
      .clone();
}

data::RegionMaskSet tensor_to_masks(const torch::Tensor& t) {
  if (t.dim() != 4 || t.size(1) != 3) throw InvalidArgument("tensor_to_masks expects [N, 3, H, W]");
  auto c = t.detach().to(torch::kFloat).contiguous();
  data::RegionMaskSet m(c.size(0), static_cast<int>(c.size(2)), static_cast<int>(c.size(3)));
  std::memcpy(m.values.data(), c.data_ptr<float>(), m.values.size() * sizeof(float));
  return m;
}

torch::Tensor frames_to_tensor(std::span<const std::uint8_t> frames, std::int64_t n, std::int64_t h, std::int64_t w) {
  if (static_cast<std::int64_t>(frames.size()) != n * h * w * 3) throw InvalidArgument("frames_to_tensor: size mismatch");
  auto t = torch::from_blob(const_cast<std::uint8_t*>(frames.data()), {n, h, w, 3}, torch::kUInt8);
  return t.permute({0, 3, 1, 2}).to(torch::kFloat).div(127.5).sub(1.0).contiguous();
}

std::vector<std::uint8_t> tensor_to_frames(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat).add(1.0).mul(127.5).round().clamp(0, 255).to(torch::kUInt8);
  c = c.permute({0, 2, 3, 1}).contiguous();
  return {c.data_ptr<std::uint8_t>(), c.data_ptr<std::uint8_t>() + c.numel()};
}

torch::Tensor skeleton_to_tensor(std::span<const std::uint8_t> skeleton, std::int64_t n, std::int64_t h, std::int64_t w) {
  if (static_cast<std::int64_t>(skeleton.size()) != n * h * w) throw InvalidArgument("skeleton_to_tensor: size mismatch");
  auto t = torch::from_blob(const_cast<std::uint8_t*>(skeleton.data()), {n, 1, h, w}, torch::kUInt8);
  return t.to(torch::kFloat).div(255.0).contiguous();
}

}  // namespace pmtk
