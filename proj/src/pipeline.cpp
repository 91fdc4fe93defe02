#include "pmtk/pipeline.hpp"

#include <cstdlib>

#include "pmtk/convert.hpp"
#include "pmtk/error.hpp"

namespace pmtk::pipeline {

diffusion::MotionClip motion_clip(const data::Sample& sample) {
  return {motion_to_tensor(sample.motion), audio_to_tensor(sample.audio)};
}

maskvae::MaskClip mask_clip(const data::Sample& sample) {
  const auto n = sample.motion.n_frames;
  const auto h = sample.height, w = sample.width;
  return {masks_to_tensor(sample.masks), skeleton_to_tensor(sample.skeleton_images, n, h, w),
          masks_to_tensor(sample.reference.masks), skeleton_to_tensor(sample.reference.skeleton, 1, h, w)};
}

render::RenderClip render_clip(const data::Sample& sample) {
  const auto n = sample.motion.n_frames;
  const auto h = sample.height, w = sample.width;
  render::RenderClip c;
  c.frames = frames_to_tensor(sample.frames, n, h, w);
  c.skeleton = skeleton_to_tensor(sample.skeleton_images, n, h, w);
  c.masks = masks_to_tensor(sample.masks);
  c.reference = frames_to_tensor(sample.reference.frame, 1, h, w)[0];
  c.azimuth = sample.view.azimuth;
  c.expert_index = sample.view.expert_index;
  return c;
}

std::string to_string(MaskSource source) { return source == MaskSource::GroundTruth ? "ground_truth" : "mask_vae"; }

MaskSource mask_source_from_string(const std::string& s) {
  if (s == "ground_truth") return MaskSource::GroundTruth;
  if (s == "mask_vae") return MaskSource::MaskVae;
  throw InvalidArgument("mask source must be ground_truth or mask_vae, got '" + s + "'");
}

torch::Tensor predict_masks(maskvae::MaskVae& vae, const data::Reference& reference, const torch::Tensor& skeleton,
                            int height, int width) {
  torch::NoGradGuard guard;
  vae->eval();
  const auto n = skeleton.size(0);
  auto ref_masks = masks_to_tensor(reference.masks).expand({n, 3, height, width});
  auto ref_skel = skeleton_to_tensor(reference.skeleton, 1, height, width).expand({n, 1, height, width});
  return vae->predict_mask(ref_masks.contiguous(), ref_skel.contiguous(), skeleton);
}

RenderResult render_motion(render::RenderModel& model, maskvae::MaskVae* vae, const RenderRequest& request) {
  const auto& cfg = model->config();
  const int h = static_cast<int>(cfg.height), w = static_cast<int>(cfg.width);
  const auto n = request.motion.n_frames;
  if (n < 1) throw InvalidArgument("render_motion: empty motion");
  if (request.mask_source == MaskSource::MaskVae && (vae == nullptr || !*vae))
    throw MissingCheckpoint("mask_vae", "required for mask_source=mask_vae");

  RenderResult out;
  out.height = h;
  out.width = w;
  out.skeleton = data::rasterize_skeleton(request.motion, request.azimuth, h, w);
  auto skeleton = skeleton_to_tensor(out.skeleton, n, h, w);
  torch::Tensor masks;
  if (request.mask_source == MaskSource::GroundTruth) {
    auto view = data::ViewLabel::from_azimuth(request.azimuth, static_cast<int>(cfg.num_views));
    masks = masks_to_tensor(data::render_sample(request.motion, view, request.identity_seed, h, w).masks);
  } else {
    masks = predict_masks(*vae, request.reference, skeleton, h, w);
  }
  out.masks = tensor_to_masks(masks);

  // Windows of cfg.window frames; the last one is padded with its final frame.
  const auto f = cfg.window;
  const auto windows = (n + f - 1) / f;
  auto pad_to = [&](const torch::Tensor& t) {
    const auto extra = windows * f - n;
    if (extra == 0) return t;
    return torch::cat({t, t.narrow(0, n - 1, 1).expand({extra, t.size(1), t.size(2), t.size(3)})}, 0);
  };
  render::RenderBatch cond;
  cond.skeleton = pad_to(skeleton).view({windows, f, 1, h, w});
  cond.masks = pad_to(masks).view({windows, f, 3, h, w});
  cond.reference = frames_to_tensor(request.reference.frame, 1, h, w).expand({windows, 3, h, w}).contiguous();
  cond.azimuth = torch::full({windows}, data::wrap_angle(request.azimuth), torch::kDouble);
  auto gen = make_generator(request.seed);
  auto frames = model->sample(cond, gen).reshape({windows * f, 3, h, w}).narrow(0, 0, n);
  out.frames = tensor_to_frames(frames);
  return out;
}

std::vector<std::uint8_t> estimate_foreground(const std::vector<std::uint8_t>& frames, std::int64_t n, int height,
                                              int width, const std::array<std::uint8_t, 3>& background,
                                              int tolerance) {
  const std::size_t pixels = static_cast<std::size_t>(n) * height * width;
  if (frames.size() != pixels * 3) throw InvalidArgument("estimate_foreground: frame buffer size mismatch");
  std::vector<std::uint8_t> fg(pixels, 0);
  for (std::size_t i = 0; i < pixels; ++i) {
    int dist = 0;
    for (int c = 0; c < 3; ++c) dist = std::max(dist, std::abs(int(frames[3 * i + c]) - int(background[c])));
    fg[i] = dist > tolerance ? 1 : 0;
  }
  return fg;
}

double binary_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw InvalidArgument("binary_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace pmtk::pipeline
