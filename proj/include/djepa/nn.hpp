#pragma once

#include <torch/torch.h>

namespace djepa {

// Pre-LN multi-head self-attention + MLP block shared by the encoders,
// predictors and world models.
struct TransformerBlockImpl : torch::nn::Module {
    TransformerBlockImpl(int width, int heads, double mlp_ratio);

    torch::Tensor forward(const torch::Tensor& x);  // B x T x W

    int heads_;
    int head_dim_;
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Decoder-style block: self-attention over queries, cross-attention to a
// memory sequence, then MLP. No causal mask.
struct CrossBlockImpl : torch::nn::Module {
    CrossBlockImpl(int width, int heads, double mlp_ratio);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& memory);

    int heads_;
    int head_dim_;
    torch::nn::LayerNorm norm1{nullptr}, norm_q{nullptr}, norm_kv{nullptr}, norm2{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
    torch::nn::Linear cross_q{nullptr}, cross_kv{nullptr}, cross_proj{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(CrossBlock);

torch::Tensor multihead_attention(const torch::Tensor& q, const torch::Tensor& k,
                                  const torch::Tensor& v, int heads);

// target <- m * target + (1 - m) * source, elementwise over all parameters
// and floating-point buffers. Throws on any shape mismatch.
void ema_update(torch::nn::Module& target, const torch::nn::Module& source, double momentum);

// Number of elements across all parameters.
int64_t parameter_count(const torch::nn::Module& m);

}  // namespace djepa
