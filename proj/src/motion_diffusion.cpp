#include "pmtk/motion_diffusion.hpp"

#include <cmath>
#include <limits>

#include "pmtk/convert.hpp"
#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"

namespace pmtk::diffusion {

namespace {

constexpr double kScaleFloor = 1e-2;
// Bound on the normalised x0 estimate during sampling.
constexpr double kNormalisedBound = 5.0;

void check_step(const NoiseSchedule& s, std::int64_t t) {
  if (t < 1 || t > s.steps())
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
}

std::vector<std::int64_t> broadcast_shape(const torch::Tensor& like) {
  std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = like.size(0);
  return shape;
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(std::int64_t steps) {
  if (steps < 2) throw InvalidArgument("noise schedule needs at least 2 steps");
  const double scale = 1000.0 / static_cast<double>(steps);
  const double lo = 1e-4 * scale;
  const double hi = 0.02 * scale;
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (std::int64_t i = 0; i < steps; ++i) betas[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.size() < 2) throw InvalidArgument("noise schedule needs at least 2 steps");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw InvalidArgument("betas must lie in (0, 1)");
    if (i > 0 && !(betas[i] > betas[i - 1])) throw InvalidArgument("betas must be strictly increasing");
  }
  NoiseSchedule s;
  s.betas_ = std::move(betas);
  s.alpha_bars_.assign(s.betas_.size() + 1, 1.0);
  for (std::size_t i = 0; i < s.betas_.size(); ++i) s.alpha_bars_[i + 1] = s.alpha_bars_[i] * (1.0 - s.betas_[i]);
  return s;
}

double NoiseSchedule::beta(std::int64_t t) const {
  check_step(*this, t);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(std::int64_t t) const {
  if (t < 0 || t > steps()) throw InvalidArgument("timestep outside [0, T]");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::posterior_variance(std::int64_t t) const {
  return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

std::pair<torch::Tensor, torch::Tensor> NoiseSchedule::coefficients(const torch::Tensor& t,
                                                                    const torch::Tensor& like) const {
  if (t.dim() != 1 || t.size(0) != like.size(0)) throw InvalidArgument("timesteps must be [B] matching the batch");
  if (t.min().item<std::int64_t>() < 1 || t.max().item<std::int64_t>() > steps())
    throw InvalidArgument("timestep outside [1, " + std::to_string(steps()) + "]");
  auto ab = torch::tensor(alpha_bars_, torch::kDouble).index_select(0, t.to(torch::kLong).cpu());
  auto shape = broadcast_shape(like);
  auto a = ab.sqrt().to(like.scalar_type()).view(shape);
  auto b = (1.0 - ab).sqrt().to(like.scalar_type()).view(shape);
  return {a, b};
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& p0, std::int64_t t, const torch::Tensor& eps) {
  check_step(schedule, t);
  if (p0.sizes() != eps.sizes()) throw InvalidArgument("q_sample: eps must be shaped like p0");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * p0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor q_sample(const NoiseSchedule& schedule, const torch::Tensor& p0, const torch::Tensor& t,
                       const torch::Tensor& eps) {
  if (p0.sizes() != eps.sizes()) throw InvalidArgument("q_sample: eps must be shaped like p0");
  auto [a, b] = schedule.coefficients(t, p0);
  return a * p0 + b * eps;
}

torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& x_t, std::int64_t t,
                         const torch::Tensor& eps_hat) {
  const double ab = schedule.alpha_bar(t);
  return (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

torch::Tensor eps_loss(const torch::Tensor& eps, const torch::Tensor& eps_hat, LossNorm norm) {
  auto sq = (eps - eps_hat).pow(2);
  if (norm == LossNorm::L2Squared) return sq.mean();
  return sq.reshape({sq.size(0), -1}).mean(1).sqrt().mean();
}

torch::Tensor training_loss_at(const EpsPredictor& model, const NoiseSchedule& schedule, const torch::Tensor& p0,
                               const torch::Tensor& t, const torch::Tensor& eps, LossNorm norm) {
  auto x_t = q_sample(schedule, p0, t, eps);
  return eps_loss(eps, model(x_t, t), norm);
}

torch::Tensor training_loss(const EpsPredictor& model, const NoiseSchedule& schedule, const torch::Tensor& p0,
                            torch::Generator& gen, LossNorm norm) {
  auto t = torch::randint(1, schedule.steps() + 1, {p0.size(0)}, gen, torch::kLong);
  auto eps = torch::randn(p0.sizes(), gen, p0.options());
  return training_loss_at(model, schedule, p0, t, eps, norm);
}

torch::Tensor ancestral_sample(const EpsPredictor& model, const NoiseSchedule& schedule, at::IntArrayRef shape,
                               torch::Generator& gen, const SampleOptions& options) {
  auto clamp = [&](const torch::Tensor& x) {
    auto y = x;
    if (options.clamp_low.defined()) y = torch::maximum(y, options.clamp_low);
    if (options.clamp_high.defined()) y = torch::minimum(y, options.clamp_high);
    return y;
  };
  auto x = torch::randn(shape, gen, torch::kFloat);
  for (std::int64_t t = schedule.steps(); t >= 1; --t) {
    auto tt = torch::full({shape[0]}, t, torch::kLong);
    auto x0 = clamp(predict_x0(schedule, x, t, model(x, tt)));
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double beta = schedule.beta(t);
    const double c0 = beta * std::sqrt(ab_prev) / (1.0 - ab);
    const double ct = (1.0 - ab_prev) * std::sqrt(1.0 - beta) / (1.0 - ab);
    x = c0 * x0 + ct * x;
    if (t > 1) x = x + std::sqrt(schedule.posterior_variance(t)) * torch::randn(shape, gen, torch::kFloat);
  }
  return clamp(x);
}

MotionDenoiserImpl::MotionDenoiserImpl(MotionDenoiserConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto w = config_.width;
  in_proj_ = register_module("in_proj", torch::nn::Linear(config_.input_dim, w));
  p1_proj_ = register_module("p1_proj", torch::nn::Linear(config_.pose_dim, w));
  if (config_.use_bridge) z_proj_ = register_module("z_proj", torch::nn::Linear(config_.z_dim, w));
  audio_proj_ = register_module("audio_proj", torch::nn::Linear(config_.audio_dim, w));
  time_mlp_ = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(w, w), torch::nn::SiLU(),
                                                                torch::nn::Linear(w, w)));
  memory_type_ = register_parameter("memory_type", torch::randn({2, w}) * 0.02);
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < config_.blocks; ++i)
    blocks_->push_back(nn::TransformerBlock(w, config_.heads, 2 * w, w));
  out_norm_ = register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
  out_proj_ = register_module("out_proj", torch::nn::Linear(w, config_.input_dim));
  nn::zero_init(out_proj_);
}

torch::Tensor MotionDenoiserImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& p1,
                                          const torch::Tensor& z, const torch::Tensor& audio, std::int64_t stride) {
  if (x_t.dim() != 3 || x_t.size(2) != config_.input_dim)
    throw InvalidArgument("denoiser expects x_t [B, L, " + std::to_string(config_.input_dim) + "]");
  const auto w = config_.width;
  const auto len = x_t.size(1);
  auto opts = x_t.options();
  auto h = in_proj_(x_t) +
           nn::sinusoidal_embedding(torch::arange(len, opts) * static_cast<double>(stride), w).unsqueeze(0);
  auto tokens = torch::cat({p1_proj_(p1).unsqueeze(1), h}, 1);
  auto temb = time_mlp_->forward(nn::sinusoidal_embedding(t.to(opts.dtype()), w));
  tokens = tokens + temb.unsqueeze(1);

  const auto n = audio.size(1);
  auto mem_pos = nn::sinusoidal_embedding(torch::arange(n, opts), w).unsqueeze(0);
  auto memory = audio_proj_(audio) + mem_pos + memory_type_[1];
  if (config_.use_bridge) {
    if (!z.defined() || z.size(1) != n) throw InvalidArgument("denoiser: z must match the audio length");
    memory = torch::cat({z_proj_(z) + mem_pos + memory_type_[0], memory}, 1);
  }
  torch::Tensor bias;
  if (config_.cross_radius > 0) {
    // Tokens past the end of the memory are treated as its last frame.
    auto qf = (torch::arange(len, opts) * static_cast<double>(stride)).clamp_max(static_cast<double>(n - 1));
    auto kf = torch::arange(n, opts).repeat({memory.size(1) / n});
    auto far = (qf.unsqueeze(1) - kf.unsqueeze(0)).abs() > static_cast<double>(config_.cross_radius);
    bias = torch::zeros({len + 1, memory.size(1)}, opts);
    bias.narrow(0, 1, len).masked_fill_(far, -std::numeric_limits<float>::infinity());
  }
  for (auto& block : *blocks_) tokens = block->as<nn::TransformerBlock>()->forward(tokens, memory, bias);
  return out_proj_(out_norm_(tokens.narrow(1, 1, len)));
}

MotionModelImpl::MotionModelImpl(MotionModelConfig config, codec::MotionCodec codec_module)
    : config_(std::move(config)) {
  config_.finalize();
  schedule_ = NoiseSchedule::linear(config_.diffusion_steps);
  audio_encoder = register_module("audio_encoder", audio::AudioEncoder(config_.audio));
  if (config_.denoiser.use_bridge) bridge = register_module("bridge", bridge::LlmBridge(config_.bridge));
  denoiser = register_module("denoiser", MotionDenoiser(config_.denoiser));
  if (config_.space == DiffusionSpace::VqLatent) {
    if (!codec_module) throw InvalidArgument("vq_latent diffusion needs a trained motion codec");
    codec = register_module("codec", codec_module);
    for (auto& p : codec->parameters()) p.set_requires_grad(false);
  }
  const auto in = config_.denoiser.input_dim;
  const auto p = config_.codec.pose_dim;
  data_mean = register_buffer("data_mean", torch::zeros({in}));
  data_scale = register_buffer("data_scale", torch::ones({in}));
  pose_mean = register_buffer("pose_mean", torch::zeros({p}));
  pose_scale = register_buffer("pose_scale", torch::ones({p}));
}

std::int64_t MotionModelImpl::stride() const {
  return config_.space == DiffusionSpace::VqLatent ? config_.codec.downsample : 1;
}

void MotionModelImpl::fit_normalization(const std::vector<torch::Tensor>& motions) {
  if (motions.empty()) throw InvalidArgument("fit_normalization: no motions");
  torch::NoGradGuard guard;
  auto poses = torch::cat(motions, 0);
  pose_mean.copy_(poses.mean(0));
  pose_scale.copy_(poses.std(0).clamp_min(kScaleFloor));
  if (config_.space == DiffusionSpace::Pose) {
    data_mean.copy_(pose_mean);
    data_scale.copy_(pose_scale);
    return;
  }
  std::vector<torch::Tensor> latents;
  for (const auto& m : motions) latents.push_back(codec->encode(m.unsqueeze(0)).squeeze(0));
  auto all = torch::cat(latents, 0);
  data_mean.copy_(all.mean(0));
  data_scale.copy_(all.std(0).clamp_min(kScaleFloor));
}

Conditioning MotionModelImpl::condition(const torch::Tensor& audio, const torch::Tensor& p1, std::int64_t n_frames) {
  Conditioning c;
  c.n_frames = n_frames;
  c.p1 = normalize_pose(p1);
  c.audio = audio_encoder(audio, n_frames);
  if (bridge) c.z = bridge(c.audio);
  return c;
}

torch::Tensor MotionModelImpl::predict_eps(const torch::Tensor& x_t, const torch::Tensor& t, const Conditioning& cond) {
  return denoiser(x_t, t, cond.p1, cond.z, cond.audio, stride());
}

torch::Tensor MotionModelImpl::to_diffusion_space(const torch::Tensor& motion) {
  if (config_.space == DiffusionSpace::Pose) return (motion - data_mean) / data_scale;
  torch::NoGradGuard guard;
  return (codec->encode(motion) - data_mean) / data_scale;
}

torch::Tensor MotionModelImpl::from_diffusion_space(const torch::Tensor& x, std::int64_t n_frames) {
  auto raw = x * data_scale + data_mean;
  if (config_.space == DiffusionSpace::VqLatent) raw = codec->decode(codec->quantize(raw), n_frames);
  return raw.clamp(-data::kCoordBound, data::kCoordBound);
}

torch::Tensor MotionModelImpl::loss(const torch::Tensor& motion, const torch::Tensor& audio, torch::Generator& gen) {
  auto x0 = to_diffusion_space(motion);
  auto cond = condition(audio, motion.select(1, 0), motion.size(1));
  EpsPredictor model = [&](const torch::Tensor& x_t, const torch::Tensor& t) { return predict_eps(x_t, t, cond); };
  return training_loss(model, schedule_, x0, gen, config_.loss_norm);
}

torch::Tensor MotionModelImpl::sample(const torch::Tensor& audio, const torch::Tensor& p1, std::int64_t n_frames,
                                      torch::Generator& gen) {
  torch::NoGradGuard guard;
  const bool was_training = is_training();
  eval();
  auto cond = condition(audio.unsqueeze(0), p1.unsqueeze(0), n_frames);
  const auto len = config_.space == DiffusionSpace::Pose ? n_frames : (n_frames + stride() - 1) / stride();
  SampleOptions opts;
  opts.clamp_low = torch::full_like(data_mean, -kNormalisedBound);
  opts.clamp_high = torch::full_like(data_mean, kNormalisedBound);
  if (config_.space == DiffusionSpace::Pose) {
    opts.clamp_low = torch::maximum(opts.clamp_low, (-data::kCoordBound - data_mean) / data_scale);
    opts.clamp_high = torch::minimum(opts.clamp_high, (data::kCoordBound - data_mean) / data_scale);
  }
  EpsPredictor model = [&](const torch::Tensor& x_t, const torch::Tensor& t) { return predict_eps(x_t, t, cond); };
  auto x = ancestral_sample(model, schedule_, {1, len, config_.denoiser.input_dim}, gen, opts);
  auto out = from_diffusion_space(x, n_frames).squeeze(0);
  if (was_training) train();
  return out;
}

data::MotionSequence MotionModelImpl::sample(const data::AudioClip& audio, const data::MotionSequence& first_pose,
                                             std::int64_t n_frames, std::uint64_t seed) {
  auto gen = make_generator(seed);
  auto p1 = motion_to_tensor(first_pose)[0];
  auto out = sample(audio_to_tensor(audio), p1, n_frames, gen);
  return tensor_to_motion(out, first_pose.fps, first_pose.joints, first_pose.dims);
}

void MotionModelImpl::set_lora_attached(bool attached) {
  if (!bridge) return;
  if (attached)
    bridge->attach_lora();
  else
    bridge->detach_lora();
}

ClipWindowSampler::ClipWindowSampler(std::vector<MotionClip> clips, std::int64_t window, std::int64_t samples_per_frame)
    : clips_(std::move(clips)), window_(window), samples_per_frame_(samples_per_frame) {
  if (clips_.empty()) throw InvalidArgument("ClipWindowSampler: no clips");
  for (const auto& c : clips_)
    if (c.motion.size(0) < window_)
      throw InvalidArgument("ClipWindowSampler: every clip needs at least " + std::to_string(window_) + " frames");
}

std::pair<torch::Tensor, torch::Tensor> ClipWindowSampler::sample(std::int64_t batch, torch::Generator& gen) const {
  auto picks = torch::randint(static_cast<std::int64_t>(clips_.size()), {batch}, gen, torch::kLong);
  auto u = torch::rand({batch}, gen, torch::kDouble);
  std::vector<torch::Tensor> motions, audios;
  const auto audio_len = window_ * samples_per_frame_;
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto& c = clips_[picks[b].item<std::int64_t>()];
    const auto span = c.motion.size(0) - window_ + 1;
    const auto start = std::min<std::int64_t>(static_cast<std::int64_t>(u[b].item<double>() * span), span - 1);
    motions.push_back(c.motion.narrow(0, start, window_));
    auto a = torch::zeros({audio_len});
    const auto a0 = start * samples_per_frame_;
    const auto avail = std::clamp<std::int64_t>(c.audio.size(0) - a0, 0, audio_len);
    if (avail > 0) a.narrow(0, 0, avail).copy_(c.audio.narrow(0, a0, avail));
    audios.push_back(a);
  }
  return {torch::stack(motions), torch::stack(audios)};
}

torch::optim::Adam make_motion_optimizer(MotionModel& model, const MotionTrainConfig& config) {
  std::vector<torch::Tensor> params;
  for (auto& p : model->parameters())
    if (p.requires_grad()) params.push_back(p);
  return torch::optim::Adam(params, torch::optim::AdamOptions(config.lr));
}

MotionTrainResult train_motion(MotionModel& model, torch::optim::Adam& optimizer, const std::vector<MotionClip>& clips,
                               const MotionTrainConfig& config, std::uint64_t seed, std::int64_t start_step,
                               const StepCallback& on_step) {
  config.validate();
  const auto spf = model->config().sample_rate / model->config().fps;
  ClipWindowSampler sampler(clips, config.window, spf);
  MotionTrainResult result;
  model->train();
  for (std::int64_t step = start_step + 1; step <= config.steps; ++step) {
    auto gen = make_generator(derive_seed(seed, step));
    auto [motion, audio] = sampler.sample(config.batch, gen);
    auto loss = model->loss(motion, audio, gen);
    check_finite(loss, "motion", step, "loss");
    optimizer.zero_grad();
    loss.backward();
    torch::nn::utils::clip_grad_norm_(optimizer.param_groups()[0].params(), 1.0);
    optimizer.step();
    const double value = loss.item<double>();
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  return result;
}

}  // namespace pmtk::diffusion
