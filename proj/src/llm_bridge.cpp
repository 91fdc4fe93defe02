#include "pmtk/llm_bridge.hpp"

#include "pmtk/error.hpp"

namespace pmtk::bridge {

namespace {

double spectral_norm(const torch::Tensor& w) {
  return torch::linalg_matrix_norm(w.detach().to(torch::kDouble), 2).item<double>();
}

}  // namespace

ProjectionImpl::ProjectionImpl(std::int64_t in_dim, std::int64_t width) {
  fc1 = register_module("fc1", torch::nn::Linear(in_dim, width));
  fc2 = register_module("fc2", torch::nn::Linear(width, width));
  torch::NoGradGuard guard;
  fc1->bias.zero_();
  fc2->bias.zero_();
}

torch::Tensor ProjectionImpl::forward(const torch::Tensor& x) { return fc2(torch::relu(fc1(x))); }

double ProjectionImpl::lipschitz_bound() const { return spectral_norm(fc1->weight) * spectral_norm(fc2->weight); }

LlmBridgeImpl::LlmBridgeImpl(BridgeConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto w = config_.width;
  projection = register_module("projection", Projection(config_.audio_dim, w));
  audio_lift = register_module("audio_lift", torch::nn::Linear(config_.audio_dim, w));
  segment = register_parameter("segment", torch::randn({2, w}) * 0.02);
  encoder = register_module("encoder", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < config_.layers; ++i) encoder->push_back(nn::TransformerBlock(w, config_.heads, 2 * w));
  out_norm = register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
  if (config_.use_lora) attach_lora();
}

torch::Tensor LlmBridgeImpl::project(const torch::Tensor& audio_features) {
  if (audio_features.dim() != 3 || audio_features.size(2) != config_.audio_dim)
    throw InvalidArgument("project expects [B, N, " + std::to_string(config_.audio_dim) + "]");
  return projection(audio_features);
}

torch::Tensor LlmBridgeImpl::enrich(const torch::Tensor& projected, const torch::Tensor& audio_features) {
  if (projected.dim() != 3 || projected.size(2) != config_.width)
    throw InvalidArgument("enrich expects projected features [B, N, " + std::to_string(config_.width) + "]");
  const auto n = projected.size(1);
  auto pos = nn::sinusoidal_embedding(torch::arange(n, projected.options()), config_.width).unsqueeze(0);
  auto tokens = projected + pos + segment[0];
  if (config_.two_argument) {
    if (!audio_features.defined() || audio_features.size(0) != projected.size(0) || audio_features.size(1) != n)
      throw InvalidArgument("enrich: projected and audio features must share batch and length");
    // Both streams reuse the per-frame positions so frame k of each lines up.
    auto lifted = audio_lift(audio_features) + pos + segment[1];
    tokens = torch::cat({tokens, lifted}, 1);
  }
  for (auto& block : *encoder) tokens = block->as<nn::TransformerBlock>()->forward(tokens);
  return out_norm(tokens.narrow(1, 0, n));
}

std::vector<torch::Tensor> LlmBridgeImpl::base_encoder_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& p : encoder->named_parameters(true))
    if (p.key().find("lora_") == std::string::npos) out.push_back(p.value());
  for (auto& p : out_norm->parameters()) out.push_back(p);
  return out;
}

void LlmBridgeImpl::attach_lora() {
  for (auto& block : *encoder) block->as<nn::TransformerBlock>()->self_attn->attach_lora(config_.lora);
  for (auto& p : base_encoder_parameters()) p.set_requires_grad(false);
  lora_attached_ = true;
}

void LlmBridgeImpl::detach_lora() {
  for (auto& block : *encoder) {
    auto& attn = block->as<nn::TransformerBlock>()->self_attn;
    attn->to_q->detach_lora();
    attn->to_v->detach_lora();
  }
  lora_attached_ = false;
}

}  // namespace pmtk::bridge
