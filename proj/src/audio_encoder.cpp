#include "pmtk/audio_encoder.hpp"

#include "pmtk/convert.hpp"
#include "pmtk/error.hpp"

namespace pmtk::audio {

torch::Tensor resample_time(const torch::Tensor& seq, std::int64_t target) {
  if (target < 1) throw InvalidArgument("resample_time: target must be >= 1");
  const auto length = seq.size(1);
  auto opts = torch::TensorOptions().dtype(torch::kDouble);
  auto pos = (torch::arange(target, opts) * (static_cast<double>(length) / static_cast<double>(target)))
                 .clamp_max(static_cast<double>(length - 1));
  auto lo = pos.floor().to(torch::kLong);
  auto hi = (lo + 1).clamp_max(length - 1);
  auto frac = (pos - lo.to(torch::kDouble)).to(seq.scalar_type()).view({1, target, 1});
  auto a = seq.index_select(1, lo);
  auto b = seq.index_select(1, hi);
  return a + (b - a) * frac;
}

AudioEncoderImpl::AudioEncoderImpl(AudioEncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  convs_ = register_module("convs", torch::nn::ModuleList());
  conv_norms_ = register_module("conv_norms", torch::nn::ModuleList());
  std::int64_t in = 1;
  for (auto out : config_.conv_channels) {
    convs_->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(in, out, config_.kernel).stride(config_.stride)));
    conv_norms_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({out})));
    in = out;
  }
  in_proj_ = register_module("in_proj", torch::nn::Linear(in, config_.channels));
  // Positions enter through a learned gate that starts closed, so the
  // untrained encoder is time-invariant.
  position_gate_ = register_parameter("position_gate", torch::zeros({1}));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < config_.layers; ++i)
    blocks_->push_back(nn::TransformerBlock(config_.channels, config_.heads, 2 * config_.channels));
  out_norm_ = register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config_.channels})));
  if (config_.freeze) set_frozen(true);
}

std::int64_t AudioEncoderImpl::receptive_field() const {
  std::int64_t field = 1;
  std::int64_t jump = 1;
  for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
    field += (config_.kernel - 1) * jump;
    jump *= config_.stride;
  }
  return field;
}

std::int64_t AudioEncoderImpl::hop() const {
  std::int64_t jump = 1;
  for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) jump *= config_.stride;
  return jump;
}

torch::Tensor AudioEncoderImpl::forward(const torch::Tensor& audio, std::int64_t target_frames) {
  if (audio.dim() != 2) throw InvalidArgument("audio encoder expects [B, S]");
  if (target_frames < 1) throw InvalidArgument("target_frames must be >= 1");
  if (audio.size(1) < receptive_field())
    throw InvalidArgument("audio too short for the encoder: need at least " + std::to_string(receptive_field()) +
                          " samples, got " + std::to_string(audio.size(1)));
  auto x = audio.unsqueeze(1);
  for (std::size_t i = 0; i < convs_->size(); ++i) {
    x = convs_[i]->as<torch::nn::Conv1d>()->forward(x);
    x = conv_norms_[i]->as<torch::nn::LayerNorm>()->forward(x.transpose(1, 2)).transpose(1, 2);
    x = torch::gelu(x);
  }
  auto h = in_proj_(x.transpose(1, 2));
  const auto length = h.size(1);
  auto pos = nn::sinusoidal_embedding(torch::arange(length, h.options()), config_.channels);
  h = h + position_gate_ * pos.unsqueeze(0);
  for (auto& block : *blocks_) h = block->as<nn::TransformerBlock>()->forward(h);
  return resample_time(out_norm_(h), target_frames);
}

torch::Tensor AudioEncoderImpl::extract_features(const data::AudioClip& clip, std::int64_t target_frames) {
  if (clip.samples.empty()) throw InvalidArgument("extract_features: empty audio");
  auto param = parameters().front();
  auto audio = audio_to_tensor(clip).to(param.options()).unsqueeze(0);
  return forward(audio, target_frames).squeeze(0);
}

void AudioEncoderImpl::set_frozen(bool frozen) {
  for (auto& p : parameters()) p.set_requires_grad(!frozen);
  config_.freeze = frozen;
}

}  // namespace pmtk::audio
