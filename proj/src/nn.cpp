#include "pmtk/nn.hpp"

#include <cmath>

#include "pmtk/error.hpp"

namespace pmtk::nn {

namespace F = torch::nn::functional;

torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, std::int64_t dim) {
  const std::int64_t half = dim / 2;
  auto opts = positions.options().dtype(positions.is_floating_point() ? positions.scalar_type() : torch::kFloat);
  auto freqs = torch::exp(torch::arange(half, opts) * (-std::log(10000.0) / static_cast<double>(std::max<std::int64_t>(half, 1))));
  auto args = positions.to(opts.dtype()).unsqueeze(-1) * freqs;
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, -1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros_like(args.narrow(-1, 0, 1))}, -1);
  return emb;
}

torch::Tensor apply_lora(const torch::Tensor& base_weight, const torch::Tensor& a, const torch::Tensor& b,
                         const LoRAConfig& config) {
  config.validate();
  if (base_weight.dim() != 2 || a.dim() != 2 || b.dim() != 2)
    throw InvalidArgument("apply_lora expects 2-D weight, A and B");
  if (a.size(0) != config.rank || b.size(1) != config.rank)
    throw InvalidArgument("apply_lora: A must be r x in and B out x r with r = " + std::to_string(config.rank));
  if (a.size(1) != base_weight.size(1) || b.size(0) != base_weight.size(0))
    throw InvalidArgument("apply_lora: adapter shape does not match the base weight");
  return base_weight + config.scaling() * torch::matmul(b, a);
}

LoRALinearImpl::LoRALinearImpl(std::int64_t in_features, std::int64_t out_features, bool with_bias)
    : in_features_(in_features), out_features_(out_features) {
  torch::nn::Linear init(torch::nn::LinearOptions(in_features, out_features).bias(with_bias));
  weight = register_parameter("weight", init->weight.detach().clone());
  if (with_bias) bias = register_parameter("bias", init->bias.detach().clone());
}

void LoRALinearImpl::attach_lora(const LoRAConfig& config) {
  config.validate();
  if (has_lora() && lora_a.size(0) != config.rank)
    throw InvalidState("adapter already attached with rank " + std::to_string(lora_a.size(0)));
  if (!has_lora()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features_));
    lora_a = register_parameter("lora_a", torch::empty({config.rank, in_features_}, weight.options()).uniform_(-bound, bound));
    lora_b = register_parameter("lora_b", torch::zeros({out_features_, config.rank}, weight.options()));
  }
  config_ = config;
  attached_ = true;
}

void LoRALinearImpl::set_base_trainable(bool trainable) {
  weight.set_requires_grad(trainable);
  if (bias.defined()) bias.set_requires_grad(trainable);
}

torch::Tensor LoRALinearImpl::effective_weight() const {
  if (!attached_) return weight;
  return apply_lora(weight, lora_a, lora_b, config_);
}

torch::Tensor LoRALinearImpl::forward(const torch::Tensor& x) {
  return F::linear(x, effective_weight(), bias.defined() ? bias : torch::Tensor());
}

AttentionImpl::AttentionImpl(std::int64_t dim, std::int64_t heads, std::int64_t kv_dim)
    : heads_(heads), head_dim_(dim / heads) {
  if (dim % heads != 0) throw InvalidArgument("attention dim must be divisible by heads");
  if (kv_dim < 0) kv_dim = dim;
  to_q = register_module("to_q", LoRALinear(dim, dim, false));
  to_k = register_module("to_k", LoRALinear(kv_dim, dim, false));
  to_v = register_module("to_v", LoRALinear(kv_dim, dim, false));
  to_out = register_module("to_out", LoRALinear(dim, dim, true));
}

void AttentionImpl::attach_lora(const LoRAConfig& config) {
  to_q->attach_lora(config);
  to_v->attach_lora(config);
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& context,
                                     const torch::Tensor& bias) {
  const auto b = query.size(0);
  const auto lq = query.size(1);
  const auto lk = context.size(1);
  auto split = [&](const torch::Tensor& t, std::int64_t len) {
    return t.view({b, len, heads_, head_dim_}).transpose(1, 2);
  };
  auto q = split(to_q(query), lq);
  auto k = split(to_k(context), lk);
  auto v = split(to_v(context), lk);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
  if (bias.defined()) scores = scores + bias;
  auto out = torch::matmul(torch::softmax(scores, -1), v);
  return to_out(out.transpose(1, 2).reshape({b, lq, heads_ * head_dim_}));
}

FeedForwardImpl::FeedForwardImpl(std::int64_t dim, std::int64_t hidden) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

TransformerBlockImpl::TransformerBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t ffn_hidden,
                                           std::int64_t memory_dim) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  self_attn = register_module("self_attn", Attention(dim, heads));
  if (memory_dim > 0) {
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    cross_attn = register_module("cross_attn", Attention(dim, heads, memory_dim));
  }
  norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ffn = register_module("ffn", FeedForward(dim, ffn_hidden));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& memory,
                                            const torch::Tensor& cross_bias) {
  auto h = norm1(x);
  auto y = x + self_attn(h, h);
  if (cross_attn) {
    if (!memory.defined()) throw InvalidArgument("transformer block expects a memory sequence");
    y = y + cross_attn(norm2(y), memory, cross_bias);
  }
  return y + ffn(norm3(y));
}

void zero_init(torch::nn::Linear& layer) {
  torch::NoGradGuard guard;
  layer->weight.zero_();
  if (layer->bias.defined()) layer->bias.zero_();
}

void zero_init(torch::nn::Conv2d& layer) {
  torch::NoGradGuard guard;
  layer->weight.zero_();
  if (layer->bias.defined()) layer->bias.zero_();
}

void zero_init(torch::nn::Conv1d& layer) {
  torch::NoGradGuard guard;
  layer->weight.zero_();
  if (layer->bias.defined()) layer->bias.zero_();
}

torch::Tensor replicate_conv1d(torch::nn::Conv1d& conv, const torch::Tensor& x, std::int64_t left, std::int64_t right) {
  if (left == 0 && right == 0) return conv(x);
  return conv(F::pad(x, F::PadFuncOptions({left, right}).mode(torch::kReplicate)));
}

bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace pmtk::nn
