#include "pmtk/mask_vae.hpp"

#include <algorithm>

#include "pmtk/error.hpp"
#include "pmtk/hash.hpp"

namespace pmtk::maskvae {

namespace F = torch::nn::functional;

torch::Tensor gaussian_kl(const torch::Tensor& mu, const torch::Tensor& logvar) {
  if (mu.sizes() != logvar.sizes()) throw InvalidArgument("gaussian_kl: mu and logvar shapes differ");
  auto per_row = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1);
  return per_row.mean();
}

torch::Tensor mask_vae_total(const torch::Tensor& rec, const torch::Tensor& kl, double kl_weight) {
  if (kl_weight == 0.0) return rec;
  return rec + kl_weight * kl;
}

ConvEncoderImpl::ConvEncoderImpl(std::int64_t in_channels, std::int64_t base, std::int64_t height, std::int64_t width,
                                 std::int64_t out_dim) {
  stages_ = register_module("stages", torch::nn::ModuleList());
  std::int64_t in = in_channels;
  std::int64_t h = height;
  std::int64_t w = width;
  for (std::int64_t c = base; h > 8; c *= 2) {
    stages_->push_back(torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, c, 4).stride(2).padding(1)), torch::nn::SiLU(),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1)), torch::nn::SiLU()));
    channels_.push_back(c);
    in = c;
    h /= 2;
    w /= 2;
  }
  head_ = register_module("head", torch::nn::Linear(in * h * w, out_dim));
}

torch::Tensor ConvEncoderImpl::forward(const torch::Tensor& x, std::vector<torch::Tensor>* features) {
  auto h = x;
  for (auto& stage : *stages_) {
    h = stage->as<torch::nn::Sequential>()->forward(h);
    if (features) features->push_back(h);
  }
  return head_(h.flatten(1));
}

namespace {

torch::nn::GroupNorm group_norm(std::int64_t channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(std::min<std::int64_t>(8, channels), channels));
}

}  // namespace

torch::Tensor MaskVaeImpl::norm(std::size_t i, const torch::Tensor& x) {
  return norms_[i]->as<torch::nn::GroupNorm>()->forward(x);
}

MaskVaeImpl::MaskVaeImpl(MaskVaeConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto c = config_.latent_dim;
  const auto base = config_.base_channels;
  mask_encoder_ = register_module("mask_encoder", ConvEncoder(3, base, config_.height, config_.width, c));
  logvar_head_ = register_module("logvar_head", torch::nn::Linear(c, c));
  skeleton_encoder_ = register_module("skeleton_encoder", ConvEncoder(1, base, config_.height, config_.width, c));
  auto chans = skeleton_encoder_->stage_channels();
  const auto deepest = chans.back();
  fuse_ = register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(3 * c + deepest, deepest, 3).padding(1)));
  up_ = register_module("up", torch::nn::ModuleList());
  merge_ = register_module("merge", torch::nn::ModuleList());
  norms_ = register_module("norms", torch::nn::ModuleList());
  norms_->push_back(group_norm(deepest));
  std::int64_t in = deepest;
  for (std::size_t k = chans.size(); k-- > 0;) {
    const auto out = k == 0 ? base : chans[k - 1];
    up_->push_back(torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1)));
    // Skip from the target skeleton at the upsampled resolution (none at
    // full resolution).
    const auto skip = k == 0 ? 0 : chans[k - 1];
    merge_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(out + skip + (k == 0 ? 1 : 0), out, 3).padding(1)));
    norms_->push_back(group_norm(out));
    in = out;
  }
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 3, 3).padding(1)));
}

void MaskVaeImpl::check_size(const torch::Tensor& t, std::int64_t channels, const char* what) const {
  if (t.dim() != 4 || t.size(1) != channels || t.size(2) != config_.height || t.size(3) != config_.width)
    throw InvalidArgument(std::string(what) + " must be [B, " + std::to_string(channels) + ", " +
                          std::to_string(config_.height) + ", " + std::to_string(config_.width) + "]");
}

MaskLatent MaskVaeImpl::encode_mask(const torch::Tensor& masks, torch::Generator* gen) {
  check_size(masks, 3, "masks");
  MaskLatent z;
  z.mu = mask_encoder_(masks);
  z.logvar = logvar_head_(torch::silu(z.mu));
  z.sample = gen ? z.mu + torch::exp(0.5 * z.logvar) * torch::randn(z.mu.sizes(), *gen, z.mu.options()) : z.mu;
  return z;
}

torch::Tensor MaskVaeImpl::encode_skeleton(const torch::Tensor& skeleton) {
  check_size(skeleton, 1, "skeleton");
  return skeleton_encoder_(skeleton);
}

torch::Tensor MaskVaeImpl::decode(const torch::Tensor& mask_code, const torch::Tensor& skeleton_i,
                                  const torch::Tensor& skeleton_j) {
  check_size(skeleton_i, 1, "skeleton_i");
  check_size(skeleton_j, 1, "skeleton_j");
  if (skeleton_i.size(0) != skeleton_j.size(0) || mask_code.size(0) != skeleton_j.size(0))
    throw InvalidArgument("predict_mask: batch sizes differ");
  auto code_i = skeleton_encoder_(skeleton_i);
  std::vector<torch::Tensor> skips;
  auto code_j = skeleton_encoder_(skeleton_j, &skips);
  auto bottom = skips.back();
  const auto hb = bottom.size(2);
  const auto wb = bottom.size(3);
  auto codes = torch::cat({mask_code, code_i, code_j}, 1).unsqueeze(-1).unsqueeze(-1).expand({-1, -1, hb, wb});
  auto h = torch::silu(norm(0, fuse_(torch::cat({codes, bottom}, 1))));
  const auto n = up_->size();
  for (std::size_t s = 0; s < n; ++s) {
    h = torch::silu(up_[s]->as<torch::nn::ConvTranspose2d>()->forward(h));
    const auto k = n - 1 - s;  // encoder stage index of the output resolution
    auto skip = k == 0 ? skeleton_j : skips[k - 1];
    h = torch::silu(norm(s + 1, merge_[s]->as<torch::nn::Conv2d>()->forward(torch::cat({h, skip}, 1))));
  }
  auto probs = torch::sigmoid(out_(h));
  return probs / probs.sum(1, true);
}

torch::Tensor MaskVaeImpl::predict_mask(const torch::Tensor& masks_i, const torch::Tensor& skeleton_i,
                                        const torch::Tensor& skeleton_j) {
  check_size(masks_i, 3, "masks_i");
  return decode(encode_mask(masks_i).mu, skeleton_i, skeleton_j);
}

MaskVaeImpl::Loss MaskVaeImpl::loss(const torch::Tensor& masks_i, const torch::Tensor& skeleton_i,
                                    const torch::Tensor& skeleton_j, const torch::Tensor& masks_j,
                                    torch::Generator& gen) {
  check_size(masks_j, 3, "masks_j");
  auto z = encode_mask(masks_i, &gen);
  auto pred = decode(z.sample, skeleton_i, skeleton_j);
  Loss l;
  l.rec = F::mse_loss(pred, masks_j);
  l.kl = gaussian_kl(z.mu, z.logvar);
  l.total = mask_vae_total(l.rec, l.kl, config_.kl_weight);
  return l;
}

PairBatch sample_pairs(const std::vector<MaskClip>& clips, std::int64_t batch, double identity_rate,
                       torch::Generator& gen) {
  if (clips.empty()) throw InvalidArgument("sample_pairs: no clips");
  auto picks = torch::randint(static_cast<std::int64_t>(clips.size()), {batch}, gen, torch::kLong);
  auto u = torch::rand({batch, 3}, gen, torch::kDouble);
  std::vector<torch::Tensor> mi, si, sj, mj;
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto& c = clips[picks[b].item<std::int64_t>()];
    const auto n = c.masks.size(0);
    const auto j = std::min<std::int64_t>(static_cast<std::int64_t>(u[b][0].item<double>() * n), n - 1);
    const double r = u[b][1].item<double>();
    mj.push_back(c.masks[j]);
    sj.push_back(c.skeleton[j]);
    if (r < identity_rate) {
      mi.push_back(c.masks[j]);
      si.push_back(c.skeleton[j]);
    } else if (r < identity_rate + 0.5 * (1.0 - identity_rate)) {
      const auto i = std::min<std::int64_t>(static_cast<std::int64_t>(u[b][2].item<double>() * n), n - 1);
      mi.push_back(c.masks[i]);
      si.push_back(c.skeleton[i]);
    } else {
      mi.push_back(c.reference_masks[0]);
      si.push_back(c.reference_skeleton[0]);
    }
  }
  return {torch::stack(mi), torch::stack(si), torch::stack(sj), torch::stack(mj)};
}

torch::optim::Adam make_mask_vae_optimizer(MaskVae& model, const MaskVaeTrainConfig& config) {
  return torch::optim::Adam(model->parameters(), torch::optim::AdamOptions(config.lr));
}

MaskVaeTrainResult train_mask_vae(MaskVae& model, torch::optim::Adam& optimizer, const std::vector<MaskClip>& clips,
                                  const MaskVaeTrainConfig& config, std::uint64_t seed, std::int64_t start_step,
                                  const StepCallback& on_step) {
  config.validate();
  MaskVaeTrainResult result;
  model->train();
  for (std::int64_t step = start_step + 1; step <= config.steps; ++step) {
    auto gen = make_generator(derive_seed(seed, step));
    auto b = sample_pairs(clips, config.batch, model->config().identity_pair_rate, gen);
    auto l = model->loss(b.masks_i, b.skeleton_i, b.skeleton_j, b.masks_j, gen);
    check_finite(l.total, "mask_vae", step, "loss");
    optimizer.zero_grad();
    l.total.backward();
    optimizer.step();
    const double value = l.total.item<double>();
    result.losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  return result;
}

}  // namespace pmtk::maskvae
