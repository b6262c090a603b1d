#include "djepa/nn.hpp"

#include <cmath>

namespace djepa {

torch::Tensor multihead_attention(const torch::Tensor& q, const torch::Tensor& k,
                                  const torch::Tensor& v, int heads) {
    auto B = q.size(0), Tq = q.size(1), W = q.size(2);
    auto Tk = k.size(1);
    int64_t hd = W / heads;
    auto qh = q.reshape({B, Tq, heads, hd}).transpose(1, 2);
    auto kh = k.reshape({B, Tk, heads, hd}).transpose(1, 2);
    auto vh = v.reshape({B, Tk, heads, hd}).transpose(1, 2);
    auto attn = torch::softmax(torch::matmul(qh, kh.transpose(-1, -2)) / std::sqrt(double(hd)), -1);
    auto out = torch::matmul(attn, vh).transpose(1, 2).reshape({B, Tq, W});
    return out;
}

TransformerBlockImpl::TransformerBlockImpl(int width, int heads, double mlp_ratio)
    : heads_(heads), head_dim_(width / heads) {
    TORCH_CHECK(width % heads == 0, "width must be divisible by heads");
    int hidden = static_cast<int>(width * mlp_ratio);
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    qkv = register_module("qkv", torch::nn::Linear(width, 3 * width));
    proj = register_module("proj", torch::nn::Linear(width, width));
    fc1 = register_module("fc1", torch::nn::Linear(width, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, width));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
    auto h = norm1->forward(x);
    auto parts = qkv->forward(h).chunk(3, -1);
    auto attn = multihead_attention(parts[0], parts[1], parts[2], heads_);
    auto y = x + proj->forward(attn);
    y = y + fc2->forward(torch::gelu(fc1->forward(norm2->forward(y))));
    return y;
}

CrossBlockImpl::CrossBlockImpl(int width, int heads, double mlp_ratio)
    : heads_(heads), head_dim_(width / heads) {
    TORCH_CHECK(width % heads == 0, "width must be divisible by heads");
    int hidden = static_cast<int>(width * mlp_ratio);
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    norm_q = register_module("norm_q", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    norm_kv = register_module("norm_kv", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    qkv = register_module("qkv", torch::nn::Linear(width, 3 * width));
    proj = register_module("proj", torch::nn::Linear(width, width));
    cross_q = register_module("cross_q", torch::nn::Linear(width, width));
    cross_kv = register_module("cross_kv", torch::nn::Linear(width, 2 * width));
    cross_proj = register_module("cross_proj", torch::nn::Linear(width, width));
    fc1 = register_module("fc1", torch::nn::Linear(width, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, width));
}

torch::Tensor CrossBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& memory) {
    auto h = norm1->forward(x);
    auto parts = qkv->forward(h).chunk(3, -1);
    auto y = x + proj->forward(multihead_attention(parts[0], parts[1], parts[2], heads_));

    auto q = cross_q->forward(norm_q->forward(y));
    auto kv = cross_kv->forward(norm_kv->forward(memory)).chunk(2, -1);
    y = y + cross_proj->forward(multihead_attention(q, kv[0], kv[1], heads_));

    y = y + fc2->forward(torch::gelu(fc1->forward(norm2->forward(y))));
    return y;
}

void ema_update(torch::nn::Module& target, const torch::nn::Module& source, double momentum) {
    TORCH_CHECK(momentum >= 0.0 && momentum <= 1.0, "momentum must be in [0,1]");
    auto tp = target.named_parameters();
    auto sp = source.named_parameters();
    TORCH_CHECK(tp.size() == sp.size(), "ema_update: parameter count mismatch");
    torch::NoGradGuard guard;
    for (const auto& item : tp) {
        auto* src = sp.find(item.key());
        TORCH_CHECK(src != nullptr, "ema_update: missing parameter ", item.key());
        TORCH_CHECK(src->sizes() == item.value().sizes(), "ema_update: shape mismatch for ", item.key());
        item.value().mul_(momentum).add_(*src, 1.0 - momentum);
    }
    auto tb = target.named_buffers();
    auto sb = source.named_buffers();
    for (const auto& item : tb) {
        if (!item.value().is_floating_point()) continue;
        auto* src = sb.find(item.key());
        TORCH_CHECK(src != nullptr, "ema_update: missing buffer ", item.key());
        TORCH_CHECK(src->sizes() == item.value().sizes(), "ema_update: shape mismatch for ", item.key());
        item.value().mul_(momentum).add_(*src, 1.0 - momentum);
    }
}

int64_t parameter_count(const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace djepa
