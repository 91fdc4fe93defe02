#include "pmtk/stages.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "pmtk/checkpoint.hpp"
#include "pmtk/convert.hpp"
#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"
#include "pmtk/media.hpp"
#include "pmtk/metrics.hpp"
#include "pmtk/module_io.hpp"

namespace pmtk::stages {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kLogEvery = 100;

void say(const StageOptions& options, const std::string& line) {
  if (options.log) options.log(line);
}

ckpt::Checkpoint blank(const RunConfig& config, const std::string& stage, std::uint64_t step) {
  ckpt::Checkpoint c;
  c.stage = stage;
  c.step = step;
  c.config_hash = config.stage_hash(stage);
  return c;
}

std::optional<ckpt::Checkpoint> resume_point(const RunConfig& config, const fs::path& workdir,
                                             const std::string& stage, const StageOptions& options) {
  const auto path = checkpoint_path(workdir, stage);
  if (options.fresh || !fs::exists(path)) return std::nullopt;
  return ckpt::load_checkpoint(path, stage, config.stage_hash(stage));
}

double tail_mean(const std::vector<double>& v, std::size_t n) {
  if (v.empty()) return std::nan("");
  n = std::min(n, v.size());
  return std::accumulate(v.end() - static_cast<std::ptrdiff_t>(n), v.end(), 0.0) / static_cast<double>(n);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

StepCallback progress(const StageOptions& options, const std::string& stage,
                      const std::function<void(std::int64_t)>& save) {
  auto window = std::make_shared<std::vector<double>>();
  return [=](std::int64_t step, double loss) {
    window->push_back(loss);
    if (step % kLogEvery == 0) {
      say(options, stage + " step " + std::to_string(step) + " loss " + fmt(tail_mean(*window, window->size())));
      window->clear();
    }
    if (options.save_every > 0 && step % options.save_every == 0) save(step);
  };
}

std::vector<torch::Tensor> split_motions(const data::DatasetReader& reader, bool validation) {
  std::vector<torch::Tensor> out;
  for (auto i : reader.split(validation)) out.push_back(motion_to_tensor(reader.load_motion(i)));
  return out;
}

std::vector<diffusion::MotionClip> motion_clips(const data::DatasetReader& reader, bool validation) {
  std::vector<diffusion::MotionClip> out;
  for (auto i : reader.split(validation))
    out.push_back({motion_to_tensor(reader.load_motion(i)), audio_to_tensor(reader.load_audio(i))});
  return out;
}

maskvae::MaskClip mask_clip_of(const data::DatasetReader& reader, std::size_t i) {
  const auto& m = reader.manifest();
  const auto n = reader.record(i).n_frames;
  const auto ref = reader.load_reference(i);
  return {masks_to_tensor(reader.load_masks(i)), skeleton_to_tensor(reader.load_skeleton(i), n, m.height, m.width),
          masks_to_tensor(ref.masks), skeleton_to_tensor(ref.skeleton, 1, m.height, m.width)};
}

std::vector<render::RenderClip> render_clips(const data::DatasetReader& reader, bool validation) {
  std::vector<render::RenderClip> out;
  for (auto i : reader.split(validation)) out.push_back(pipeline::render_clip(reader.load(i)));
  return out;
}

void require_nonempty(const std::vector<std::size_t>& idx, const std::string& split) {
  if (idx.empty()) throw ConfigError("data", "the " + split + " split is empty");
}

// Audio cropped or zero-padded to exactly n_frames of motion.
data::AudioClip fit_audio(const data::AudioClip& audio, std::int64_t n_frames, int fps) {
  data::AudioClip out = audio;
  const auto need = static_cast<std::size_t>(n_frames * audio.sample_rate / fps);
  out.samples.resize(need, 0.0f);
  return out;
}

data::MotionSequence first_frame(const data::MotionSequence& m) {
  data::MotionSequence p(1, m.fps, m.joints, m.dims);
  std::copy_n(m.values.begin(), m.frame_size(), p.values.begin());
  return p;
}

}  // namespace

fs::path dataset_path(const fs::path& workdir) { return workdir / "data"; }

fs::path checkpoint_path(const fs::path& workdir, const std::string& stage) {
  return workdir / stage / "checkpoint.pmtk";
}

data::DatasetReader open_dataset(const fs::path& workdir) {
  const auto root = dataset_path(workdir);
  if (!fs::exists(root / "manifest.json")) throw MissingCheckpoint("data", (root / "manifest.json").string());
  return data::DatasetReader(root);
}

json train_vq_stage(const RunConfig& config, const fs::path& workdir, const StageOptions& options) {
  const auto reader = open_dataset(workdir);
  require_nonempty(reader.split(false), "training");
  const auto train = split_motions(reader, false);
  const auto val = split_motions(reader, true);

  auto tc = config.vq_train;
  if (options.steps) tc.steps = *options.steps;
  tc.validate();
  torch::manual_seed(config.stage_seed(stage::kVq));
  codec::MotionCodec codec(config.vq);
  auto optimizer = codec::make_vq_optimizer(codec, tc);
  std::int64_t start = 0;
  if (auto c = resume_point(config, workdir, stage::kVq, options)) {
    ckpt::get_module(*c, *codec, "model");
    ckpt::get_adam(*c, optimizer, "adam");
    start = static_cast<std::int64_t>(c->step);
    say(options, "vq: resuming at step " + std::to_string(start));
  }

  json result = {{"start_step", start}};
  auto save = [&](std::int64_t step) {
    auto c = blank(config, stage::kVq, static_cast<std::uint64_t>(step));
    ckpt::put_module(c, *codec, "model");
    ckpt::put_adam(c, optimizer, "adam");
    for (auto& [k, v] : result.items())
      if (v.is_number()) c.metadata[k] = v.dump();
    ckpt::save_checkpoint(checkpoint_path(workdir, stage::kVq), c);
  };
  if (start < tc.steps) {
    auto r = codec::train_vq(codec, optimizer, train, tc, config.stage_seed(stage::kVq), start,
                             progress(options, "vq", save));
    result["final_loss"] = tail_mean(r.losses, 50);
    result["reinitialized_codes"] = r.reinitialized_codes;
  }
  const auto end = std::max(start, tc.steps);

  double l1 = 0.0;
  {
    torch::NoGradGuard guard;
    codec->eval();
    for (const auto& m : val.empty() ? train : val) {
      auto rec = codec->forward(m.unsqueeze(0)).reconstruction;
      l1 += (rec[0] - m).abs().mean().item<double>();
    }
    codec->train();
  }
  result["val_l1"] = l1 / static_cast<double>(val.empty() ? train.size() : val.size());
  result["steps"] = end;
  save(end);
  say(options, "vq: held-out L1 " + fmt(result["val_l1"].get<double>()));
  return result;
}

json train_motion_stage(const RunConfig& config, const fs::path& workdir, const StageOptions& options) {
  const auto reader = open_dataset(workdir);
  require_nonempty(reader.split(false), "training");
  const auto clips = motion_clips(reader, false);

  auto tc = config.motion_train;
  if (options.steps) tc.steps = *options.steps;
  tc.validate();
  codec::MotionCodec codec{nullptr};
  if (config.motion_space == DiffusionSpace::VqLatent) codec = load_codec(config, workdir);
  torch::manual_seed(config.stage_seed(stage::kMotion));
  diffusion::MotionModel model(config.motion_model(), codec);
  auto optimizer = diffusion::make_motion_optimizer(model, tc);
  std::int64_t start = 0;
  if (auto c = resume_point(config, workdir, stage::kMotion, options)) {
    ckpt::get_module(*c, *model, "model");
    ckpt::get_adam(*c, optimizer, "adam");
    start = static_cast<std::int64_t>(c->step);
    say(options, "motion: resuming at step " + std::to_string(start));
  } else {
    std::vector<torch::Tensor> motions;
    for (const auto& c : clips) motions.push_back(c.motion);
    model->fit_normalization(motions);
  }

  json result = {{"start_step", start}};
  auto save = [&](std::int64_t step) {
    auto c = blank(config, stage::kMotion, static_cast<std::uint64_t>(step));
    ckpt::put_module(c, *model, "model");
    ckpt::put_adam(c, optimizer, "adam");
    for (auto& [k, v] : result.items())
      if (v.is_number()) c.metadata[k] = v.dump();
    ckpt::save_checkpoint(checkpoint_path(workdir, stage::kMotion), c);
  };
  if (start < tc.steps) {
    auto r = diffusion::train_motion(model, optimizer, clips, tc, config.stage_seed(stage::kMotion), start,
                                     progress(options, "motion", save));
    result["final_loss"] = tail_mean(r.losses, 50);
  }
  result["steps"] = std::max(start, tc.steps);
  save(result["steps"].get<std::int64_t>());
  return result;
}

json train_mask_vae_stage(const RunConfig& config, const fs::path& workdir, const StageOptions& options) {
  const auto reader = open_dataset(workdir);
  require_nonempty(reader.split(false), "training");
  std::vector<maskvae::MaskClip> train, val;
  for (auto i : reader.split(false)) train.push_back(mask_clip_of(reader, i));
  for (auto i : reader.split(true)) val.push_back(mask_clip_of(reader, i));

  auto tc = config.mask_vae_train;
  if (options.steps) tc.steps = *options.steps;
  tc.validate();
  torch::manual_seed(config.stage_seed(stage::kMaskVae));
  maskvae::MaskVae model(config.mask_vae);
  auto optimizer = maskvae::make_mask_vae_optimizer(model, tc);
  std::int64_t start = 0;
  if (auto c = resume_point(config, workdir, stage::kMaskVae, options)) {
    ckpt::get_module(*c, *model, "model");
    ckpt::get_adam(*c, optimizer, "adam");
    start = static_cast<std::int64_t>(c->step);
    say(options, "mask_vae: resuming at step " + std::to_string(start));
  }

  json result = {{"start_step", start}};
  auto save = [&](std::int64_t step) {
    auto c = blank(config, stage::kMaskVae, static_cast<std::uint64_t>(step));
    ckpt::put_module(c, *model, "model");
    ckpt::put_adam(c, optimizer, "adam");
    for (auto& [k, v] : result.items())
      if (v.is_number()) c.metadata[k] = v.dump();
    ckpt::save_checkpoint(checkpoint_path(workdir, stage::kMaskVae), c);
  };
  if (start < tc.steps) {
    auto r = maskvae::train_mask_vae(model, optimizer, train, tc, config.stage_seed(stage::kMaskVae), start,
                                     progress(options, "mask_vae", save));
    result["final_loss"] = tail_mean(r.losses, 50);
  }

  // Transfer IoU: every held-out frame predicted from its clip's reference.
  {
    torch::NoGradGuard guard;
    model->eval();
    double face = 0.0, fg = 0.0;
    const auto& clips = val.empty() ? train : val;
    for (const auto& c : clips) {
      const auto n = c.masks.size(0);
      auto pred = model->predict_mask(c.reference_masks.expand({n, -1, -1, -1}).contiguous(),
                                      c.reference_skeleton.expand({n, -1, -1, -1}).contiguous(), c.skeleton);
      const auto a = tensor_to_masks(pred), b = tensor_to_masks(c.masks);
      face += metrics::mask_iou(a, b, metrics::MaskChannel::Face);
      fg += metrics::mask_iou(a, b, metrics::MaskChannel::Foreground);
    }
    model->train();
    result["val_transfer_iou"] = fg / static_cast<double>(clips.size());
    result["val_face_iou"] = face / static_cast<double>(clips.size());
  }
  result["steps"] = std::max(start, tc.steps);
  save(result["steps"].get<std::int64_t>());
  say(options, "mask_vae: held-out transfer IoU " + fmt(result["val_transfer_iou"].get<double>()));
  return result;
}

RenderPhase render_phase_from_string(const std::string& s) {
  if (s == "1") return RenderPhase::One;
  if (s == "2") return RenderPhase::Two;
  if (s == "both") return RenderPhase::Both;
  throw InvalidArgument("phase must be 1, 2 or both, got '" + s + "'");
}

json train_renderer_stage(const RunConfig& config, const fs::path& workdir, RenderPhase phase,
                          const StageOptions& options) {
  const auto path = checkpoint_path(workdir, stage::kRenderer);
  const auto reader = open_dataset(workdir);
  require_nonempty(reader.split(false), "training");
  const auto tc = config.renderer_train;

  torch::manual_seed(config.stage_seed(stage::kRenderer));
  render::RenderModel model(config.renderer);
  auto ae_optimizer = render::make_autoencoder_optimizer(model, tc);
  auto optimizer = render::make_render_optimizer(model, tc);
  std::map<std::string, std::string> meta{{"ae_step", "0"}, {"phase1_step", "0"}, {"phase2_step", "0"}};
  if (auto c = resume_point(config, workdir, stage::kRenderer, options)) {
    ckpt::get_module(*c, *model, "model");
    ckpt::get_adam(*c, ae_optimizer, "adam_ae");
    ckpt::get_adam(*c, optimizer, "adam");
    for (auto& [k, v] : c->metadata) meta[k] = v;
    say(options, "renderer: resuming (ae " + meta["ae_step"] + ", phase 1 " + meta["phase1_step"] + ", phase 2 " +
                     meta["phase2_step"] + ")");
  }
  auto step_of = [&](const std::string& key) { return std::stoll(meta[key]); };
  auto save = [&] {
    const auto total = step_of("ae_step") + step_of("phase1_step") + step_of("phase2_step");
    auto c = blank(config, stage::kRenderer, static_cast<std::uint64_t>(total));
    c.metadata = meta;
    ckpt::put_module(c, *model, "model");
    ckpt::put_adam(c, ae_optimizer, "adam_ae");
    ckpt::put_adam(c, optimizer, "adam");
    ckpt::save_checkpoint(path, c);
  };
  auto saver = [&](const std::string& key) {
    return [&, key](std::int64_t step) {
      meta[key] = std::to_string(step);
      save();
    };
  };

  if (phase == RenderPhase::Two && step_of("phase1_step") < tc.phase1_steps)
    throw MissingCheckpoint("renderer_phase1", path.string());

  const auto train = render_clips(reader, false);
  auto val = render_clips(reader, true);
  if (val.empty()) val = train;
  const auto seed = config.stage_seed(stage::kRenderer);
  json result;

  if (phase != RenderPhase::Two) {
    if (step_of("ae_step") < tc.ae_steps) {
      render::train_autoencoder(model, ae_optimizer, train, tc, derive_seed(seed, 0), step_of("ae_step"),
                                progress(options, "renderer/ae", saver("ae_step")));
      meta["ae_step"] = std::to_string(tc.ae_steps);
      save();
    }
    if (step_of("phase1_step") < tc.phase1_steps) {
      auto r = render::train_render_phase(model, optimizer, train, 1, tc.phase1_steps, tc, derive_seed(seed, 1),
                                          step_of("phase1_step"), progress(options, "renderer/phase1",
                                                                           saver("phase1_step")));
      meta["phase1_step"] = std::to_string(tc.phase1_steps);
      meta["phase1_isolation_checks"] = std::to_string(r.isolation_checks);
      result["phase1_final_loss"] = tail_mean(r.losses, 50);
    }
    meta["val_loss_phase1"] = fmt(render::validation_loss(model, val, 1, tc, derive_seed(seed, 9)));
    // Same soft gating as phase 2 so the two numbers are comparable.
    meta["val_loss_after_phase1"] = fmt(render::validation_loss(model, val, 2, tc, derive_seed(seed, 9)));
    save();
    say(options, "renderer: phase 1 done, val loss " + meta["val_loss_after_phase1"]);
  }
  if (phase != RenderPhase::One) {
    if (step_of("phase2_step") < tc.phase2_steps) {
      auto r = render::train_render_phase(model, optimizer, train, 2, tc.phase2_steps, tc, derive_seed(seed, 2),
                                          step_of("phase2_step"), progress(options, "renderer/phase2",
                                                                           saver("phase2_step")));
      meta["phase2_step"] = std::to_string(tc.phase2_steps);
      result["phase2_final_loss"] = tail_mean(r.losses, 50);
    }
    meta["val_loss_after_phase2"] = fmt(render::validation_loss(model, val, 2, tc, derive_seed(seed, 9)));
    save();
    say(options, "renderer: phase 2 done, val loss " + meta["val_loss_after_phase2"]);
  }
  for (auto& [k, v] : meta) result[k] = std::stod(v);
  return result;
}

codec::MotionCodec load_codec(const RunConfig& config, const fs::path& workdir) {
  const auto c = ckpt::load_checkpoint(checkpoint_path(workdir, stage::kVq), stage::kVq, config.stage_hash(stage::kVq));
  codec::MotionCodec codec(config.vq);
  ckpt::get_module(c, *codec, "model");
  codec->eval();
  return codec;
}

diffusion::MotionModel load_motion(const RunConfig& config, const fs::path& workdir) {
  const auto c = ckpt::load_checkpoint(checkpoint_path(workdir, stage::kMotion), stage::kMotion,
                                       config.stage_hash(stage::kMotion));
  codec::MotionCodec codec{nullptr};
  if (config.motion_space == DiffusionSpace::VqLatent) codec = load_codec(config, workdir);
  diffusion::MotionModel model(config.motion_model(), codec);
  ckpt::get_module(c, *model, "model");
  model->eval();
  return model;
}

maskvae::MaskVae load_mask_vae(const RunConfig& config, const fs::path& workdir) {
  const auto c = ckpt::load_checkpoint(checkpoint_path(workdir, stage::kMaskVae), stage::kMaskVae,
                                       config.stage_hash(stage::kMaskVae));
  maskvae::MaskVae model(config.mask_vae);
  ckpt::get_module(c, *model, "model");
  model->eval();
  return model;
}

render::RenderModel load_renderer(const RunConfig& config, const fs::path& workdir) {
  const auto c = ckpt::load_checkpoint(checkpoint_path(workdir, stage::kRenderer), stage::kRenderer,
                                       config.stage_hash(stage::kRenderer));
  render::RenderModel model(config.renderer);
  ckpt::get_module(c, *model, "model");
  model->eval();
  return model;
}

ReferenceInput load_reference(const fs::path& png, const diffusion::MotionModel& motion, int height, int width) {
  const auto image = io::read_png(png);
  if (image.height != height || image.width != width)
    throw InvalidArgument("reference image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          ", the models expect " + std::to_string(width) + "x" + std::to_string(height));
  ReferenceInput in;
  in.reference.frame = image.pixels;
  std::copy_n(image.pixels.begin(), 3, in.background.begin());
  const auto dir = png.parent_path();
  const auto fps = motion->config().fps;

  if (fs::exists(dir / "reference_masks.tnsr") && fs::exists(dir / "reference_skeleton.tnsr") &&
      fs::exists(dir / "motion.tnsr")) {
    in.reference.masks = data::load_masks_file(dir / "reference_masks.tnsr");
    in.reference.skeleton = io::load_tnsr(dir / "reference_skeleton.tnsr").to_u8();
    const auto values = io::load_tnsr(dir / "motion.tnsr").to_f32();
    in.first_pose = data::MotionSequence(1, fps);
    if (values.size() < in.first_pose.values.size()) throw FormatError((dir / "motion.tnsr").string(), 0, "too short");
    std::copy_n(values.begin(), in.first_pose.values.size(), in.first_pose.values.begin());
    return in;
  }

  auto pose = motion->pose_mean.detach().clone().unsqueeze(0);
  in.first_pose = tensor_to_motion(pose, fps);
  in.reference.skeleton = data::rasterize_skeleton(in.first_pose, 0.0, height, width);
  const auto fg = pipeline::estimate_foreground(in.reference.frame, 1, height, width, in.background);
  // Head joint: centre of the topmost skeleton row.
  int top = -1;
  double cx = 0.0;
  for (int y = 0; y < height && top < 0; ++y) {
    int count = 0;
    for (int x = 0; x < width; ++x)
      if (in.reference.skeleton[static_cast<std::size_t>(y) * width + x]) {
        cx += x;
        ++count;
      }
    if (count > 0) {
      top = y;
      cx /= count;
    }
  }
  const double radius = 0.12 * std::min(height, width) / 2.0;
  in.reference.masks = data::RegionMaskSet(1, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const bool on = fg[static_cast<std::size_t>(y) * width + x] != 0;
      const bool face = on && top >= 0 && std::hypot(x - cx, y - top) <= radius;
      in.reference.masks.at(0, data::Region::Face, y, x) = face ? 1.0f : 0.0f;
      in.reference.masks.at(0, data::Region::Body, y, x) = on && !face ? 1.0f : 0.0f;
      in.reference.masks.at(0, data::Region::Background, y, x) = on ? 0.0f : 1.0f;
    }
  return in;
}

SampleResult sample_video(const RunConfig& config, const fs::path& workdir, const SampleRequest& request) {
  for (const auto* s : {stage::kMotion, stage::kRenderer})
    if (!fs::exists(checkpoint_path(workdir, s))) throw MissingCheckpoint(s, checkpoint_path(workdir, s).string());
  const bool use_vae = request.mask_source == pipeline::MaskSource::MaskVae;
  if (use_vae && !fs::exists(checkpoint_path(workdir, stage::kMaskVae)))
    throw MissingCheckpoint(stage::kMaskVae, checkpoint_path(workdir, stage::kMaskVae).string());
  request.audio.validate();
  if (request.audio.sample_rate != config.data.sample_rate)
    throw InvalidArgument("audio sample rate " + std::to_string(request.audio.sample_rate) + " Hz, expected " +
                          std::to_string(config.data.sample_rate));

  auto motion_model = load_motion(config, workdir);
  auto renderer = load_renderer(config, workdir);
  maskvae::MaskVae vae{nullptr};
  if (use_vae) vae = load_mask_vae(config, workdir);

  const int h = config.data.height, w = config.data.width, fps = config.data.fps;
  const auto ref = load_reference(request.reference_png, motion_model, h, w);
  const auto n = request.frames > 0
                     ? request.frames
                     : data::frames_for_samples(request.audio.samples.size(), request.audio.sample_rate, fps);
  const auto audio = fit_audio(request.audio, n, fps);

  SampleResult out;
  out.motion = motion_model->sample(audio, ref.first_pose, n, derive_seed(request.seed, 0));
  pipeline::RenderRequest rq;
  rq.motion = out.motion;
  rq.reference = ref.reference;
  rq.azimuth = request.azimuth_deg * std::numbers::pi / 180.0;
  rq.mask_source = request.mask_source;
  rq.seed = derive_seed(request.seed, 1);
  out.video = pipeline::render_motion(renderer, use_vae ? &vae : nullptr, rq);
  return out;
}

void write_sample(const SampleResult& result, const fs::path& out) {
  const auto& v = result.video;
  fs::create_directories(out / "frames");
  const std::size_t frame = static_cast<std::size_t>(v.height) * v.width * 3;
  for (std::int64_t i = 0; i < result.motion.n_frames; ++i) {
    io::RgbImage img{v.height, v.width, {}};
    img.pixels.assign(v.frames.begin() + static_cast<std::ptrdiff_t>(i * frame),
                      v.frames.begin() + static_cast<std::ptrdiff_t>((i + 1) * frame));
    char name[32];
    std::snprintf(name, sizeof name, "%05lld.png", static_cast<long long>(i));
    io::write_png(out / "frames" / name, img);
  }
  io::save_tnsr(out / "motion.tnsr", ckpt::to_record(motion_to_tensor(result.motion).view(
                                         {result.motion.n_frames, result.motion.joints, result.motion.dims})));
  data::save_masks(out / "masks.tnsr", v.masks);
}

json evaluate(const RunConfig& config, const fs::path& workdir, const std::function<void(const std::string&)>& log) {
  auto say_ = [&](const std::string& s) {
    if (log) log(s);
  };
  const auto reader = open_dataset(workdir);
  auto idx = reader.split(true);
  if (idx.empty()) idx = reader.split(false);
  if (static_cast<std::int64_t>(idx.size()) > config.metrics.eval_clips) idx.resize(config.metrics.eval_clips);
  const auto seed = config.stage_seed("eval");
  const int fps = config.data.fps;
  json out = {{"clips", idx.size()}};
  bool any = false;

  if (fs::exists(checkpoint_path(workdir, stage::kMotion))) {
    any = true;
    auto model = load_motion(config, workdir);
    codec::MotionCodec codec{nullptr};
    if (fs::exists(checkpoint_path(workdir, stage::kVq))) codec = load_codec(config, workdir);
    std::vector<data::MotionSequence> gen, real;
    double lvd_true = 0.0, lvd_shuf = 0.0, l1 = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto motion = reader.load_motion(idx[k]);
      const auto other = reader.load_audio(idx[(k + 1) % idx.size()]);
      const auto p1 = first_frame(motion);
      const auto s = derive_seed(seed, k);
      auto a = model->sample(reader.load_audio(idx[k]), p1, motion.n_frames, s);
      auto b = model->sample(fit_audio(other, motion.n_frames, fps), p1, motion.n_frames, s);
      lvd_true += metrics::lvd(a, motion);
      lvd_shuf += metrics::lvd(b, motion);
      l1 += metrics::l1_pose(a, motion);
      gen.push_back(std::move(a));
      real.push_back(motion);
    }
    const double n = static_cast<double>(idx.size());
    std::mt19937_64 rng(seed);
    json m = {{"lvd", lvd_true / n},
              {"lvd_shuffled_audio", lvd_shuf / n},
              {"l1", l1 / n},
              {"diversity", idx.size() > 1 ? metrics::diversity(gen, static_cast<int>(config.metrics.diversity_pairs), rng)
                                           : 0.0}};
    if (codec) {
      torch::NoGradGuard guard;
      auto feats = [&](const std::vector<data::MotionSequence>& seqs) {
        std::vector<torch::Tensor> rows;
        for (const auto& s : seqs) rows.push_back(codec->features(motion_to_tensor(s).unsqueeze(0))[0]);
        auto t = torch::stack(rows).to(torch::kDouble).contiguous();
        Eigen::MatrixXd mat(t.size(0), t.size(1));
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
          for (Eigen::Index c = 0; c < mat.cols(); ++c) mat(r, c) = t[r][c].item<double>();
        return mat;
      };
      if (idx.size() > 1)
        m["fgd"] = metrics::frechet_distance(metrics::fit_gaussian(feats(gen)), metrics::fit_gaussian(feats(real)));
    }
    out["motion"] = m;
    say_("motion: " + m.dump());
  }

  if (fs::exists(checkpoint_path(workdir, stage::kMaskVae))) {
    any = true;
    auto vae = load_mask_vae(config, workdir);
    double face = 0.0, body = 0.0, fg = 0.0, flick_pred = 0.0, flick_gt = 0.0;
    for (auto i : idx) {
      const auto c = mask_clip_of(reader, i);
      const auto ref = reader.load_reference(i);
      const auto pred = tensor_to_masks(
          pipeline::predict_masks(vae, ref, c.skeleton, config.data.height, config.data.width));
      const auto gt = reader.load_masks(i);
      face += metrics::mask_iou(pred, gt, metrics::MaskChannel::Face);
      body += metrics::mask_iou(pred, gt, metrics::MaskChannel::Body);
      fg += metrics::mask_iou(pred, gt, metrics::MaskChannel::Foreground);
      flick_pred += metrics::flicker(pred);
      flick_gt += metrics::flicker(gt);
    }
    const double n = static_cast<double>(idx.size());
    out["mask_vae"] = {{"transfer_iou_foreground", fg / n},
                       {"transfer_iou_face", face / n},
                       {"transfer_iou_body", body / n},
                       {"flicker", flick_pred / n},
                       {"flicker_ground_truth", flick_gt / n}};
    say_("mask_vae: " + out["mask_vae"].dump());
  }

  if (fs::exists(checkpoint_path(workdir, stage::kRenderer))) {
    any = true;
    auto model = load_renderer(config, workdir);
    std::vector<render::RenderClip> clips;
    for (auto i : idx) clips.push_back(pipeline::render_clip(reader.load(i)));
    json r = {{"val_loss", render::validation_loss(model, clips, 2, config.renderer_train, seed)}};
    // One window of the first clip with ground-truth masks.
    const auto s = reader.load(idx.front());
    pipeline::RenderRequest rq;
    rq.motion = s.motion;
    rq.motion.n_frames = std::min<std::int64_t>(s.motion.n_frames, config.renderer.window);
    rq.motion.values.resize(static_cast<std::size_t>(rq.motion.n_frames) * rq.motion.frame_size());
    rq.reference = s.reference;
    rq.azimuth = s.view.azimuth;
    rq.mask_source = pipeline::MaskSource::GroundTruth;
    rq.identity_seed = s.identity_seed;
    rq.seed = seed;
    const auto res = pipeline::render_motion(model, nullptr, rq);
    const auto bg = data::Identity::from_seed(s.identity_seed).background;
    const auto h = config.data.height, w = config.data.width;
    const auto gt_frames = std::vector<std::uint8_t>(
        s.frames.begin(), s.frames.begin() + static_cast<std::ptrdiff_t>(rq.motion.n_frames * h * w * 3));
    r["foreground_iou"] = pipeline::binary_iou(pipeline::estimate_foreground(res.frames, rq.motion.n_frames, h, w, bg),
                                               pipeline::estimate_foreground(gt_frames, rq.motion.n_frames, h, w, bg));
    double mse = 0.0;
    for (std::size_t k = 0; k < gt_frames.size(); ++k) {
      const double d = (double(res.frames[k]) - double(gt_frames[k])) / 255.0;
      mse += d * d;
    }
    r["pixel_mse"] = mse / static_cast<double>(gt_frames.size());
    out["renderer"] = r;
    say_("renderer: " + r.dump());
  }
  if (!any) throw MissingCheckpoint(stage::kMotion, checkpoint_path(workdir, stage::kMotion).string());
  return out;
}

}  // namespace pmtk::stages
