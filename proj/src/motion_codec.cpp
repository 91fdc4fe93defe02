#include "pmtk/motion_codec.hpp"

#include "pmtk/convert.hpp"
#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"
#include "pmtk/nn.hpp"

namespace pmtk::codec {

namespace F = torch::nn::functional;

QuantizedLatent quantize(const torch::Tensor& latents, const torch::Tensor& codebook) {
  if (!codebook.defined() || codebook.dim() != 2 || codebook.size(0) == 0)
    throw InvalidState("quantize: codebook is empty");
  if (latents.size(-1) != codebook.size(1))
    throw InvalidArgument("quantize: latent width " + std::to_string(latents.size(-1)) + " does not match codebook width " +
                          std::to_string(codebook.size(1)));
  torch::NoGradGuard guard;
  auto diff = latents.detach().unsqueeze(-2) - codebook.detach();
  auto indices = diff.pow(2).sum(-1).argmin(-1);
  QuantizedLatent q;
  q.indices = indices;
  q.vectors = codebook.detach().index_select(0, indices.reshape({-1})).view(latents.sizes());
  return q;
}

torch::Tensor straight_through(const torch::Tensor& latents, const torch::Tensor& quantized) {
  return latents + (quantized - latents).detach();
}

VqLoss vq_loss(const torch::Tensor& motion, const torch::Tensor& reconstruction, const torch::Tensor& latents,
               const torch::Tensor& quantized, double beta) {
  if (motion.sizes() != reconstruction.sizes()) throw InvalidArgument("vq_loss: reconstruction shape mismatch");
  if (latents.sizes() != quantized.sizes()) throw InvalidArgument("vq_loss: latent shape mismatch");
  VqLoss loss;
  loss.recon = F::mse_loss(reconstruction, motion);
  loss.codebook = F::mse_loss(quantized, latents.detach());
  loss.commitment = beta * F::mse_loss(latents, quantized.detach());
  return loss;
}

MotionCodecImpl::MotionCodecImpl(MotionCodecConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto p = config_.pose_dim;
  const auto h = config_.hidden;
  enc_in_ = register_module("enc_in", torch::nn::Conv1d(torch::nn::Conv1dOptions(p, h, 3)));
  enc_down_ = register_module("enc_down", torch::nn::ModuleList());
  dec_up_ = register_module("dec_up", torch::nn::ModuleList());
  for (std::int64_t f = config_.downsample; f > 1; f /= 2) {
    enc_down_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(h, h, 4).stride(2)));
    enc_down_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(h, h, 3)));
    dec_up_->push_back(torch::nn::ConvTranspose1d(torch::nn::ConvTranspose1dOptions(h, h, 4).stride(2).padding(1)));
    dec_up_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(h, h, 3)));
  }
  enc_out_ = register_module("enc_out", torch::nn::Conv1d(torch::nn::Conv1dOptions(h, config_.code_dim, 3)));
  dec_in_ = register_module("dec_in", torch::nn::Conv1d(torch::nn::Conv1dOptions(config_.code_dim, h, 3)));
  dec_out_ = register_module("dec_out", torch::nn::Conv1d(torch::nn::Conv1dOptions(h, p, 3)));
  const double bound = 1.0 / static_cast<double>(config_.codebook_size);
  codebook = register_parameter("codebook", torch::empty({config_.codebook_size, config_.code_dim}).uniform_(-bound, bound));
  last_used = register_buffer("last_used", torch::zeros({config_.codebook_size}, torch::kLong));
}

torch::Tensor MotionCodecImpl::encode(const torch::Tensor& motion) {
  if (motion.dim() != 3 || motion.size(2) != config_.pose_dim)
    throw InvalidArgument("encode expects [B, N, " + std::to_string(config_.pose_dim) + "]");
  const auto n = motion.size(1);
  const auto f = config_.downsample;
  if (n < f) throw InvalidArgument("encode: need at least " + std::to_string(f) + " frames, got " + std::to_string(n));
  const auto m = (n + f - 1) / f;
  auto x = motion.transpose(1, 2);
  if (m * f > n) x = F::pad(x, F::PadFuncOptions({0, m * f - n}).mode(torch::kReplicate));
  x = torch::gelu(nn::replicate_conv1d(enc_in_, x, 1, 1));
  for (std::size_t i = 0; i < enc_down_->size(); i += 2) {
    auto down = enc_down_[i]->as<torch::nn::Conv1d>();
    auto mix = enc_down_[i + 1]->as<torch::nn::Conv1d>();
    x = torch::gelu(down->forward(F::pad(x, F::PadFuncOptions({1, 1}).mode(torch::kReplicate))));
    x = x + torch::gelu(mix->forward(F::pad(x, F::PadFuncOptions({1, 1}).mode(torch::kReplicate))));
  }
  return nn::replicate_conv1d(enc_out_, x, 1, 1).transpose(1, 2);
}

QuantizedLatent MotionCodecImpl::quantize(const torch::Tensor& latents) const {
  auto q = codec::quantize(latents, codebook);
  q.downsample_factor = config_.downsample;
  return q;
}

torch::Tensor MotionCodecImpl::decode(const torch::Tensor& vectors, std::int64_t target_frames) {
  if (vectors.dim() != 3 || vectors.size(2) != config_.code_dim)
    throw InvalidArgument("decode expects [B, M, " + std::to_string(config_.code_dim) + "]");
  const auto m = vectors.size(1);
  if (m < 1) throw InvalidArgument("decode: need at least one latent step");
  if (target_frames < 1 || target_frames > m * config_.downsample)
    throw InvalidArgument("decode: target_frames " + std::to_string(target_frames) + " exceeds " +
                          std::to_string(m * config_.downsample));
  auto x = torch::gelu(nn::replicate_conv1d(dec_in_, vectors.transpose(1, 2), 1, 1));
  for (std::size_t i = 0; i < dec_up_->size(); i += 2) {
    x = torch::gelu(dec_up_[i]->as<torch::nn::ConvTranspose1d>()->forward(x));
    auto mix = dec_up_[i + 1]->as<torch::nn::Conv1d>();
    x = x + torch::gelu(mix->forward(F::pad(x, F::PadFuncOptions({1, 1}).mode(torch::kReplicate))));
  }
  auto out = nn::replicate_conv1d(dec_out_, x, 1, 1).transpose(1, 2);
  return out.narrow(1, 0, target_frames);
}

MotionCodecImpl::Output MotionCodecImpl::forward(const torch::Tensor& motion) {
  Output out;
  out.latents = encode(motion);
  out.quantized = quantize(out.latents);
  out.reconstruction = decode(straight_through(out.latents, out.quantized.vectors), motion.size(1));
  return out;
}

torch::Tensor MotionCodecImpl::features(const torch::Tensor& motion) { return encode(motion).mean(1); }

data::MotionSequence MotionCodecImpl::reconstruct(const data::MotionSequence& motion) {
  torch::NoGradGuard guard;
  auto x = motion_to_tensor(motion).unsqueeze(0);
  auto q = quantize(encode(x));
  return tensor_to_motion(decode(q, motion.n_frames).squeeze(0), motion.fps, motion.joints, motion.dims);
}

WindowSampler::WindowSampler(std::vector<torch::Tensor> sequences, std::int64_t window)
    : sequences_(std::move(sequences)), window_(window) {
  if (sequences_.empty()) throw InvalidArgument("WindowSampler: no sequences");
  for (const auto& s : sequences_)
    if (s.dim() != 2 || s.size(0) < window_)
      throw InvalidArgument("WindowSampler: every sequence needs at least " + std::to_string(window_) + " frames");
}

torch::Tensor WindowSampler::sample(std::int64_t batch, torch::Generator& gen) const {
  auto picks = torch::randint(static_cast<std::int64_t>(sequences_.size()), {batch}, gen, torch::kLong);
  auto u = torch::rand({batch}, gen, torch::kDouble);
  std::vector<torch::Tensor> rows;
  rows.reserve(batch);
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto& s = sequences_[picks[b].item<std::int64_t>()];
    const auto span = s.size(0) - window_ + 1;
    const auto start = std::min<std::int64_t>(static_cast<std::int64_t>(u[b].item<double>() * span), span - 1);
    rows.push_back(s.narrow(0, start, window_));
  }
  return torch::stack(rows);
}

torch::optim::Adam make_vq_optimizer(MotionCodec& codec, const VqTrainConfig& config) {
  return torch::optim::Adam(codec->parameters(), torch::optim::AdamOptions(config.lr));
}

VqTrainResult train_vq(MotionCodec& codec, torch::optim::Adam& optimizer, const std::vector<torch::Tensor>& motions,
                       const VqTrainConfig& config, std::uint64_t seed, std::int64_t start_step,
                       const StepCallback& on_step) {
  config.validate();
  WindowSampler sampler(motions, config.window);
  VqTrainResult result;
  codec->train();
  for (std::int64_t step = start_step + 1; step <= config.steps; ++step) {
    auto gen = make_generator(derive_seed(seed, step));
    auto batch = sampler.sample(config.batch, gen);
    auto out = codec->forward(batch);
    auto loss = vq_loss(batch, out.reconstruction, out.latents, codec->codebook.index_select(0, out.quantized.indices.reshape({-1}))
                                                                    .view(out.latents.sizes()),
                        codec->config().beta);
    auto total = loss.total();
    check_finite(total, "vq", step, "loss");
    optimizer.zero_grad();
    total.backward();
    optimizer.step();

    torch::NoGradGuard guard;
    auto flat = out.quantized.indices.reshape({-1});
    codec->last_used.index_fill_(0, flat, step);
    // The first step seeds the whole codebook from encoder outputs; later
    // steps only re-seed entries that went unused for too long.
    auto dead = step == 1 ? torch::ones_like(codec->last_used, torch::kBool)
                          : (step - codec->last_used) > config.dead_code_steps;
    const auto n_dead = dead.sum().item<std::int64_t>();
    if (n_dead > 0) {
      auto pool = out.latents.detach().reshape({-1, codec->codebook.size(1)});
      auto rows = torch::randint(pool.size(0), {n_dead}, gen, torch::kLong);
      auto noise = torch::randn({n_dead, pool.size(1)}, gen, torch::kFloat) * 1e-3;
      auto slots = dead.nonzero().squeeze(1);
      codec->codebook.index_copy_(0, slots, pool.index_select(0, rows) + noise);
      codec->last_used.index_fill_(0, slots, step);
      if (step > 1) result.reinitialized_codes += n_dead;
    }
    const double value = total.item<double>();
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  return result;
}

}  // namespace pmtk::codec
