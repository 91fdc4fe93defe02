#include "pmtk/renderer.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"

namespace pmtk::render {

namespace F = torch::nn::functional;
using torch::nn::Conv2d;
using torch::nn::Conv2dOptions;
using torch::nn::ConvTranspose2d;
using torch::nn::ConvTranspose2dOptions;

namespace {

constexpr double kLatentBound = 5.0;

torch::Tensor tokens_of(const torch::Tensor& map) { return map.flatten(2).transpose(1, 2); }

}  // namespace

LatentAutoencoderImpl::LatentAutoencoderImpl(std::int64_t c, std::int64_t latent_channels) {
  encoder_ = register_module(
      "encoder", torch::nn::Sequential(Conv2d(Conv2dOptions(3, c, 3).padding(1)), torch::nn::SiLU(),
                                       Conv2d(Conv2dOptions(c, c, 4).stride(2).padding(1)), torch::nn::SiLU(),
                                       Conv2d(Conv2dOptions(c, 2 * c, 4).stride(2).padding(1)), torch::nn::SiLU(),
                                       Conv2d(Conv2dOptions(2 * c, 2 * c, 4).stride(2).padding(1)), torch::nn::SiLU(),
                                       Conv2d(Conv2dOptions(2 * c, latent_channels, 1))));
  decoder_ = register_module(
      "decoder",
      torch::nn::Sequential(Conv2d(Conv2dOptions(latent_channels, 2 * c, 3).padding(1)), torch::nn::SiLU(),
                            ConvTranspose2d(ConvTranspose2dOptions(2 * c, 2 * c, 4).stride(2).padding(1)),
                            torch::nn::SiLU(), ConvTranspose2d(ConvTranspose2dOptions(2 * c, c, 4).stride(2).padding(1)),
                            torch::nn::SiLU(), ConvTranspose2d(ConvTranspose2dOptions(c, c, 4).stride(2).padding(1)),
                            torch::nn::SiLU(), Conv2d(Conv2dOptions(c, 3, 3).padding(1))));
  latent_scale = register_buffer("latent_scale", torch::ones({1}));
}

torch::Tensor LatentAutoencoderImpl::encode(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) % 8 != 0 || images.size(3) % 8 != 0)
    throw InvalidArgument("autoencoder expects [B, 3, H, W] with H, W multiples of 8");
  return encoder_->forward(images) * latent_scale;
}

torch::Tensor LatentAutoencoderImpl::decode(const torch::Tensor& latents) {
  return decoder_->forward(latents / latent_scale);
}

void LatentAutoencoderImpl::fit_scale(const torch::Tensor& images) {
  torch::NoGradGuard guard;
  auto raw = encoder_->forward(images);
  latent_scale.fill_(1.0 / std::max(raw.std().item<double>(), 1e-6));
}

PoseGuiderImpl::PoseGuiderImpl(std::int64_t latent_channels) {
  auto last = Conv2d(Conv2dOptions(64, latent_channels, 3).padding(1).bias(false));
  convs_ = register_module(
      "convs", torch::nn::Sequential(Conv2d(Conv2dOptions(1, 16, 4).stride(2).padding(1).bias(false)), torch::nn::SiLU(),
                                     Conv2d(Conv2dOptions(16, 32, 4).stride(2).padding(1).bias(false)), torch::nn::SiLU(),
                                     Conv2d(Conv2dOptions(32, 64, 4).stride(2).padding(1).bias(false)), torch::nn::SiLU(),
                                     last));
  nn::zero_init(last);
}

torch::Tensor PoseGuiderImpl::forward(const torch::Tensor& raster, const torch::Tensor& foreground) {
  auto g = convs_->forward(raster);
  if (foreground.size(2) != g.size(2) || foreground.size(3) != g.size(3))
    throw InvalidArgument("pose guider: foreground mask must be at latent resolution");
  return g * foreground;
}

RenderBlockImpl::RenderBlockImpl(BlockKind kind, std::int64_t dim, const RendererConfig& config, bool temporal)
    : kind_(kind), temporal_(temporal) {
  const auto hidden = config.ffn_mult * dim;
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  self_attn_ = register_module("self_attn", nn::Attention(dim, config.heads));
  if (temporal_) {
    norm_t_ = register_module("norm_t", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    temporal_attn_ = register_module("temporal_attn", nn::Attention(dim, config.heads));
  }
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  auto make_view_moe = [&] {
    return moe::ViewMoE(dim, config.heads, hidden, config.view_embed_dim, config.num_views, config.tau,
                        config.view_combine);
  };
  if (kind_ == BlockKind::Reference) {
    view_moe = register_module("view_moe", make_view_moe());
  } else {
    mask_moe = register_module("mask_moe", moe::MaskMoE(dim, hidden));
    if (config.view_moe_in_denoiser) {
      norm3_ = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
      view_moe = register_module("view_moe", make_view_moe());
    }
  }
}

torch::Tensor RenderBlockImpl::forward_reference(const torch::Tensor& x, const ViewContext& view,
                                                 torch::Tensor* record) {
  auto h = norm1_(x);
  if (record) *record = h;
  auto y = x + self_attn_(h, h);
  return y + view_moe->combine(norm2_(y), view.gates, view.embedding);
}

torch::Tensor RenderBlockImpl::forward_denoiser(const torch::Tensor& x, const torch::Tensor& temb,
                                                const torch::Tensor& ref, const torch::Tensor& masks,
                                                std::int64_t frames, const ViewContext& view) {
  auto y = x + temb.unsqueeze(1);
  auto h = norm1_(y);
  y = y + self_attn_(h, torch::cat({h, ref}, 1));
  if (temporal_) {
    const auto n = y.size(0), len = y.size(1), c = y.size(2);
    const auto b = n / frames;
    auto ht = norm_t_(y).view({b, frames, len, c}).permute({0, 2, 1, 3}).reshape({b * len, frames, c});
    ht = ht + nn::sinusoidal_embedding(torch::arange(frames, y.options()), c).unsqueeze(0);
    auto out = temporal_attn_(ht, ht).view({b, len, frames, c}).permute({0, 2, 1, 3}).reshape({n, len, c});
    y = y + out;
  }
  y = y + mask_moe->forward_tokens(norm2_(y), masks);
  if (view_moe) y = y + view_moe->combine(norm3_(y), view.gates, view.embedding);
  return y;
}

LatentBackboneImpl::LatentBackboneImpl(BlockKind kind, const RendererConfig& config) : kind_(kind), config_(config) {
  const auto wh = config.width_high;
  const auto wl = config.width_low;
  in_proj_ = register_module("in_proj", torch::nn::Linear(config.latent_channels, wh));
  down_ = register_module("down", Conv2d(Conv2dOptions(wh, wl, 4).stride(2).padding(1)));
  up_ = register_module("up", ConvTranspose2d(ConvTranspose2dOptions(wl, wh, 4).stride(2).padding(1)));
  merge_ = register_module("merge", torch::nn::Linear(2 * wh, wh));
  const bool denoiser = kind == BlockKind::Denoiser;
  blocks_.push_back(register_module("block0", RenderBlock(kind, wh, config, denoiser)));
  blocks_.push_back(register_module("block1", RenderBlock(kind, wl, config, false)));
  if (denoiser) {
    blocks_.push_back(register_module("block2", RenderBlock(kind, wh, config, false)));
    time_mlp_ = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(wh, wh), torch::nn::SiLU(),
                                                                  torch::nn::Linear(wh, wh)));
    time_low_ = register_module("time_low", torch::nn::Linear(wh, wl));
    out_norm_ = register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({wh})));
    out_proj_ = register_module("out_proj", torch::nn::Linear(wh, config.latent_channels));
    nn::zero_init(out_proj_);
  } else {
    // The last reference level only contributes its normalised input, so it
    // needs just the norm of a block.
    out_norm_ = register_module("record_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({wh})));
  }
}

torch::Tensor LatentBackboneImpl::to_map(const torch::Tensor& tokens, std::int64_t h, std::int64_t w) const {
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), h, w});
}

std::vector<torch::Tensor> LatentBackboneImpl::reference_features(const torch::Tensor& latents,
                                                                  const ViewContext& view) {
  if (kind_ != BlockKind::Reference) throw InvalidState("reference_features called on a denoiser backbone");
  const auto h = latents.size(2), w = latents.size(3);
  if (h != config_.latent_height() || w != config_.latent_width())
    throw InvalidArgument("reference latents must be " + std::to_string(config_.latent_height()) + "x" +
                          std::to_string(config_.latent_width()));
  std::vector<torch::Tensor> feats(kLevels);
  auto x0 = blocks_[0]->forward_reference(in_proj_(tokens_of(latents)), view, &feats[0]);
  auto low = tokens_of(down_(to_map(x0, h, w)));
  auto x1 = blocks_[1]->forward_reference(low, view, &feats[1]);
  auto up = tokens_of(up_(to_map(x1, h / 2, w / 2)));
  feats[2] = out_norm_(merge_(torch::cat({up, x0}, 2)));
  return feats;
}

torch::Tensor LatentBackboneImpl::denoise(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& masks,
                                          const std::vector<torch::Tensor>& reference, const ViewContext& view) {
  if (kind_ != BlockKind::Denoiser) throw InvalidState("denoise called on a reference backbone");
  if (x.dim() != 5) throw InvalidArgument("denoiser expects [B, F, C, h, w]");
  if (reference.size() != static_cast<std::size_t>(kLevels))
    throw InvalidArgument("denoiser needs " + std::to_string(kLevels) + " reference feature levels");
  const auto b = x.size(0), f = x.size(1), c = x.size(2), h = x.size(3), w = x.size(4);
  const auto n = b * f;
  auto rep = [&](const torch::Tensor& v) { return v.defined() ? v.repeat_interleave(f, 0) : v; };
  ViewContext frame_view{rep(view.gates), rep(view.embedding)};
  auto temb = rep(time_mlp_->forward(nn::sinusoidal_embedding(t.to(x.scalar_type()), config_.width_high)));

  auto m_full = masks.reshape({n, 3, h, w});
  auto m0 = tokens_of(m_full);
  auto m1 = tokens_of(moe::downsample_masks(m_full, h / 2, w / 2));

  auto x0 = blocks_[0]->forward_denoiser(in_proj_(tokens_of(x.reshape({n, c, h, w}))), temb, rep(reference[0]), m0, f,
                                         frame_view);
  auto low = tokens_of(down_(to_map(x0, h, w)));
  auto x1 = blocks_[1]->forward_denoiser(low, time_low_(temb), rep(reference[1]), m1, f, frame_view);
  auto up = tokens_of(up_(to_map(x1, h / 2, w / 2)));
  auto x2 = blocks_[2]->forward_denoiser(merge_(torch::cat({up, x0}, 2)), temb, rep(reference[2]), m0, f, frame_view);
  auto out = out_proj_(out_norm_(x2));
  return out.transpose(1, 2).reshape({b, f, c, h, w});
}

std::vector<moe::ViewMoE> LatentBackboneImpl::view_moes() const {
  std::vector<moe::ViewMoE> out;
  for (const auto& b : blocks_)
    if (b->view_moe) out.push_back(b->view_moe);
  return out;
}

RenderModelImpl::RenderModelImpl(RendererConfig config) : config_(std::move(config)) {
  config_.validate();
  schedule_ = diffusion::NoiseSchedule::linear(config_.diffusion_steps);
  autoencoder = register_module("autoencoder", LatentAutoencoder(config_.ae_channels, config_.latent_channels));
  pose_guider = register_module("pose_guider", PoseGuider(config_.latent_channels));
  view_embedding = register_module("view_embedding", moe::ViewEmbedding(config_.num_views, config_.view_embed_dim));
  reference_net = register_module("reference_net", LatentBackbone(BlockKind::Reference, config_));
  denoiser = register_module("denoiser", LatentBackbone(BlockKind::Denoiser, config_));
}

ViewContext RenderModelImpl::view_context(const torch::Tensor& azimuth, int phase) {
  auto d = moe::view_distance(azimuth, config_.num_views);
  return {moe::view_gates(d, phase, config_.tau, config_.view_combine), view_embedding(d)};
}

std::vector<torch::Tensor> RenderModelImpl::reference_features(const torch::Tensor& reference, const ViewContext& view) {
  if (reference.dim() != 4 || reference.size(2) != config_.height || reference.size(3) != config_.width)
    throw InvalidArgument("reference image must be [B, 3, " + std::to_string(config_.height) + ", " +
                          std::to_string(config_.width) + "]");
  torch::Tensor lat;
  {
    torch::NoGradGuard guard;
    lat = autoencoder->encode(reference);
  }
  return reference_net->reference_features(lat, view);
}

torch::Tensor RenderModelImpl::guidance(const torch::Tensor& skeleton, const torch::Tensor& masks) {
  auto m = moe::downsample_masks(masks, config_.latent_height(), config_.latent_width());
  return pose_guider(skeleton, m.narrow(1, 0, 2).sum(1, true));
}

torch::Tensor RenderModelImpl::latents_of(const torch::Tensor& frames) {
  torch::NoGradGuard guard;
  const auto b = frames.size(0), f = frames.size(1);
  auto lat = autoencoder->encode(frames.reshape({b * f, 3, config_.height, config_.width}));
  return lat.view({b, f, lat.size(1), lat.size(2), lat.size(3)});
}

torch::Tensor RenderModelImpl::predict_eps(const torch::Tensor& x_t, const torch::Tensor& t, const RenderBatch& batch,
                                           const std::vector<torch::Tensor>& reference, const ViewContext& view) {
  const auto b = x_t.size(0), f = x_t.size(1);
  const auto h = config_.height, w = config_.width;
  if (batch.skeleton.size(0) != b || batch.skeleton.size(1) != f || batch.masks.size(1) != f)
    throw InvalidArgument("render conditioning must match the latent batch and window");
  auto skel = batch.skeleton.reshape({b * f, 1, h, w});
  auto masks = batch.masks.reshape({b * f, 3, h, w});
  auto guide = guidance(skel, masks).view(x_t.sizes());
  auto m_lat = moe::downsample_masks(masks, config_.latent_height(), config_.latent_width())
                   .view({b, f, 3, config_.latent_height(), config_.latent_width()});
  return denoiser->denoise(x_t + guide, t, m_lat, reference, view);
}

torch::Tensor RenderModelImpl::loss_at(const RenderBatch& batch, int phase, const torch::Tensor& t,
                                       const torch::Tensor& eps) {
  auto x0 = latents_of(batch.frames);
  auto x_t = diffusion::q_sample(schedule_, x0, t, eps);
  auto view = view_context(batch.azimuth, phase);
  auto ref = reference_features(batch.reference, view);
  return diffusion::eps_loss(eps, predict_eps(x_t, t, batch, ref, view), config_.loss_norm);
}

torch::Tensor RenderModelImpl::loss(const RenderBatch& batch, int phase, torch::Generator& gen) {
  const auto b = batch.frames.size(0), f = batch.frames.size(1);
  auto t = torch::randint(1, schedule_.steps() + 1, {b}, gen, torch::kLong);
  auto eps = torch::randn({b, f, config_.latent_channels, config_.latent_height(), config_.latent_width()}, gen,
                          torch::kFloat);
  return loss_at(batch, phase, t, eps);
}

torch::Tensor RenderModelImpl::sample(const RenderBatch& cond, torch::Generator& gen, int phase) {
  torch::NoGradGuard guard;
  const bool was_training = is_training();
  eval();
  const auto b = cond.skeleton.size(0), f = cond.skeleton.size(1);
  auto view = view_context(cond.azimuth, phase);
  auto ref = reference_features(cond.reference, view);
  diffusion::EpsPredictor model = [&](const torch::Tensor& x_t, const torch::Tensor& t) {
    return predict_eps(x_t, t, cond, ref, view);
  };
  diffusion::SampleOptions opts;
  opts.clamp_low = torch::full({1}, -kLatentBound);
  opts.clamp_high = torch::full({1}, kLatentBound);
  auto lat = diffusion::ancestral_sample(
      model, schedule_, {b, f, config_.latent_channels, config_.latent_height(), config_.latent_width()}, gen, opts);
  auto frames = autoencoder->decode(lat.view({b * f, config_.latent_channels, config_.latent_height(),
                                              config_.latent_width()}))
                    .clamp(-1.0, 1.0);
  if (was_training) train();
  return frames.view({b, f, 3, config_.height, config_.width});
}

std::vector<moe::ViewMoE> RenderModelImpl::view_moes() const {
  auto out = reference_net->view_moes();
  for (auto& m : denoiser->view_moes()) out.push_back(m);
  return out;
}

RenderBatch sample_windows(const std::vector<RenderClip>& clips, const std::vector<std::size_t>& subset,
                           std::int64_t batch, std::int64_t window, torch::Generator& gen) {
  if (clips.empty()) throw InvalidArgument("sample_windows: no clips");
  const auto pool = subset.empty() ? clips.size() : subset.size();
  auto picks = torch::randint(static_cast<std::int64_t>(pool), {batch}, gen, torch::kLong);
  auto u = torch::rand({batch}, gen, torch::kDouble);
  std::vector<torch::Tensor> frames, skel, masks, refs;
  std::vector<double> az;
  for (std::int64_t i = 0; i < batch; ++i) {
    auto idx = static_cast<std::size_t>(picks[i].item<std::int64_t>());
    const auto& c = clips[subset.empty() ? idx : subset[idx]];
    const auto n = c.frames.size(0);
    if (n < window) throw InvalidArgument("sample_windows: clip shorter than the window");
    const auto span = n - window + 1;
    const auto start = std::min<std::int64_t>(static_cast<std::int64_t>(u[i].item<double>() * span), span - 1);
    frames.push_back(c.frames.narrow(0, start, window));
    skel.push_back(c.skeleton.narrow(0, start, window));
    masks.push_back(c.masks.narrow(0, start, window));
    refs.push_back(c.reference);
    az.push_back(c.azimuth);
  }
  return {torch::stack(frames), torch::stack(skel), torch::stack(masks), torch::stack(refs),
          torch::tensor(az, torch::kDouble)};
}

std::vector<int> uncovered_anchors(const std::vector<RenderClip>& clips, std::int64_t num_views) {
  std::set<int> seen;
  for (const auto& c : clips) seen.insert(c.expert_index);
  std::vector<int> missing;
  for (int k = 0; k < num_views; ++k)
    if (!seen.count(k)) missing.push_back(k);
  return missing;
}

void assert_phase1_isolation(RenderModel& model, int selected) {
  for (auto& m : model->view_moes()) {
    for (std::int64_t k = 0; k < m->num_experts(); ++k) {
      if (k == selected) continue;
      for (auto& p : m->expert(k).parameters()) {
        const auto& g = p.grad();
        if (g.defined() && g.abs().max().item<double>() != 0.0)
          throw InvalidState("phase-1 isolation violated: expert " + std::to_string(k) +
                             " has a non-zero gradient while expert " + std::to_string(selected) + " is selected");
      }
    }
  }
}

torch::optim::Adam make_autoencoder_optimizer(RenderModel& model, const RendererTrainConfig& config) {
  return torch::optim::Adam(model->autoencoder->parameters(), torch::optim::AdamOptions(config.ae_lr));
}

torch::optim::Adam make_render_optimizer(RenderModel& model, const RendererTrainConfig& config) {
  std::vector<torch::Tensor> params;
  for (auto* m : std::initializer_list<torch::nn::Module*>{model->pose_guider.get(), model->view_embedding.get(),
                                                           model->reference_net.get(), model->denoiser.get()})
    for (auto& p : m->parameters()) params.push_back(p);
  return torch::optim::Adam(params, torch::optim::AdamOptions(config.lr));
}

PhaseResult train_autoencoder(RenderModel& model, torch::optim::Adam& optimizer, const std::vector<RenderClip>& clips,
                              const RendererTrainConfig& config, std::uint64_t seed, std::int64_t start_step,
                              const StepCallback& on_step) {
  config.validate();
  PhaseResult result;
  auto& ae = model->autoencoder;
  ae->train();
  const auto window = model->config().window;
  const auto h = model->config().height, w = model->config().width;
  for (std::int64_t step = start_step + 1; step <= config.ae_steps; ++step) {
    auto gen = make_generator(derive_seed(seed, step));
    auto batch = sample_windows(clips, {}, config.batch_windows, window, gen);
    auto x = batch.frames.reshape({-1, 3, h, w});
    auto loss = F::mse_loss(ae->reconstruct(x), x);
    check_finite(loss, "autoencoder", step, "loss");
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    result.losses.push_back(loss.item<double>());
    if (on_step) on_step(step, result.losses.back());
  }
  if (start_step < config.ae_steps || config.ae_steps == 0) {
    auto gen = make_generator(derive_seed(seed, 0));
    auto batch = sample_windows(clips, {}, 16, window, gen);
    ae->fit_scale(batch.frames.reshape({-1, 3, h, w}));
  }
  return result;
}

PhaseResult train_render_phase(RenderModel& model, torch::optim::Adam& optimizer, const std::vector<RenderClip>& clips,
                               int phase, std::int64_t steps, const RendererTrainConfig& config, std::uint64_t seed,
                               std::int64_t start_step, const StepCallback& on_step) {
  config.validate();
  if (phase != 1 && phase != 2) throw InvalidArgument("render phase must be 1 or 2");
  const auto views = model->config().num_views;
  std::vector<std::vector<std::size_t>> by_anchor(static_cast<std::size_t>(views));
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const int k = clips[i].expert_index;
    if (k < 0 || k >= views) throw ConfigError("data.views", "clip expert index outside the renderer's view count");
    by_anchor[k].push_back(i);
  }
  if (phase == 1) {
    auto missing = uncovered_anchors(clips, views);
    if (!missing.empty()) {
      std::ostringstream os;
      os << "no training clips for view anchor(s)";
      for (auto k : missing) os << ' ' << k;
      throw ConfigError("renderer.num_views", os.str());
    }
  }
  PhaseResult result;
  model->train();
  model->autoencoder->eval();
  const auto stage = "renderer_phase" + std::to_string(phase);
  for (std::int64_t step = start_step + 1; step <= steps; ++step) {
    auto gen = make_generator(derive_seed(seed, step));
    const int anchor = static_cast<int>((step - 1) % views);
    auto batch = sample_windows(clips, phase == 1 ? by_anchor[anchor] : std::vector<std::size_t>{},
                                config.batch_windows, model->config().window, gen);
    auto loss = model->loss(batch, phase, gen);
    check_finite(loss, stage, step, "loss");
    optimizer.zero_grad();
    loss.backward();
    if (phase == 1) {
      assert_phase1_isolation(model, anchor);
      ++result.isolation_checks;
    }
    for (auto& group : optimizer.param_groups()) torch::nn::utils::clip_grad_norm_(group.params(), 1.0);
    optimizer.step();
    result.losses.push_back(loss.item<double>());
    if (on_step) on_step(step, result.losses.back());
  }
  return result;
}

double validation_loss(RenderModel& model, const std::vector<RenderClip>& clips, int phase,
                       const RendererTrainConfig& config, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  double total = 0.0;
  for (std::int64_t i = 0; i < config.val_windows; ++i) {
    auto gen = make_generator(derive_seed(seed, static_cast<std::uint64_t>(i)));
    auto batch = sample_windows(clips, {}, 1, model->config().window, gen);
    total += model->loss(batch, phase, gen).item<double>();
  }
  if (was_training) model->train();
  return total / static_cast<double>(config.val_windows);
}

}  // namespace pmtk::render
