#pragma once

// Small building blocks shared by every network in the pipeline.

#include <torch/torch.h>

#include <cstdint>
#include <optional>

#include "pmtk/configs.hpp"

namespace pmtk::nn {

// Transformer-style sinusoidal features of `positions` (any shape, float).
// Returns positions.shape + [dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& positions, std::int64_t dim);

// W + (alpha / r) * B * A. A is r x in, B is out x r.
torch::Tensor apply_lora(const torch::Tensor& base_weight, const torch::Tensor& a, const torch::Tensor& b,
                         const LoRAConfig& config);

// Linear layer with an optional low-rank adapter. With the adapter attached
// the layer computes x (W + s B A)^T + bias; B starts at zero so attaching is
// an exact no-op until B is trained.
class LoRALinearImpl : public torch::nn::Module {
 public:
  LoRALinearImpl(std::int64_t in_features, std::int64_t out_features, bool bias = true);

  void attach_lora(const LoRAConfig& config);
  void detach_lora() { attached_ = false; }
  bool lora_attached() const { return attached_; }
  bool has_lora() const { return lora_a.defined(); }
  void set_base_trainable(bool trainable);

  torch::Tensor effective_weight() const;
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
  torch::Tensor lora_a;
  torch::Tensor lora_b;

 private:
  std::int64_t in_features_;
  std::int64_t out_features_;
  LoRAConfig config_;
  bool attached_ = false;
};
TORCH_MODULE(LoRALinear);

// Multi-head scaled dot-product attention with separate query / key-value
// inputs. kv_dim defaults to dim.
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(std::int64_t dim, std::int64_t heads, std::int64_t kv_dim = -1);

  // `bias` is an optional additive score bias [Lq, Lk] (-inf masks a pair).
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context, const torch::Tensor& bias = {});

  // Adapters on the query and value projections.
  void attach_lora(const LoRAConfig& config);

  LoRALinear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};

 private:
  std::int64_t heads_;
  std::int64_t head_dim_;
};
TORCH_MODULE(Attention);

class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(std::int64_t dim, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

// Pre-norm transformer block: self-attention, optional cross-attention to a
// memory sequence, feed-forward.
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t ffn_hidden, std::int64_t memory_dim = 0);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& memory = {},
                        const torch::Tensor& cross_bias = {});

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  Attention self_attn{nullptr}, cross_attn{nullptr};
  FeedForward ffn{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Zero a module's weight and bias in place (no autograd history).
void zero_init(torch::nn::Linear& layer);
void zero_init(torch::nn::Conv2d& layer);
void zero_init(torch::nn::Conv1d& layer);

// Replicate-pad along the last axis then convolve (1-D) without padding.
torch::Tensor replicate_conv1d(torch::nn::Conv1d& conv, const torch::Tensor& x, std::int64_t left, std::int64_t right);

// Non-finite check used by every trainer.
bool all_finite(const torch::Tensor& t);

}  // namespace pmtk::nn
