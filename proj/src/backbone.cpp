#include "djepa/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace djepa {

void MaskSpec::validate(int n_patches) const {
    std::vector<bool> seen(n_patches, false);
    auto mark = [&](const std::vector<int64_t>& ids) {
        for (int64_t i : ids) {
            if (i < 0 || i >= n_patches) throw std::invalid_argument("mask index out of range");
            if (seen[i]) throw std::invalid_argument("mask sets overlap");
            seen[i] = true;
        }
    };
    mark(visible);
    mark(targets);
    if (static_cast<int>(visible.size() + targets.size()) != n_patches)
        throw std::invalid_argument("mask does not cover all patches");
}

torch::Tensor MaskSpec::visible_tensor() const {
    return torch::tensor(visible, torch::kInt64);
}

torch::Tensor MaskSpec::target_tensor() const {
    return torch::tensor(targets, torch::kInt64);
}

MaskSpec sample_mask(int n_patches, double ratio_lo, double ratio_hi, Rng& rng) {
    if (!(ratio_lo > 0.0 && ratio_lo <= ratio_hi && ratio_hi < 1.0))
        throw std::invalid_argument("mask ratio range must satisfy 0 < lo <= hi < 1");
    double r = ratio_lo + (ratio_hi - ratio_lo) * rng.uniform();
    int m = static_cast<int>(std::lround(r * n_patches));
    m = std::clamp(m, 1, n_patches - 1);
    auto picked = rng.sample_distinct(n_patches, m);
    MaskSpec mask;
    mask.targets.assign(picked.begin(), picked.end());
    std::sort(mask.targets.begin(), mask.targets.end());
    std::vector<bool> is_target(n_patches, false);
    for (int64_t i : mask.targets) is_target[i] = true;
    for (int i = 0; i < n_patches; ++i)
        if (!is_target[i]) mask.visible.push_back(i);
    return mask;
}

MaskSpec full_visibility_mask(int n_patches) {
    MaskSpec mask;
    mask.visible.resize(n_patches);
    std::iota(mask.visible.begin(), mask.visible.end(), 0);
    return mask;
}

torch::Tensor patchify(const torch::Tensor& frames, int patch_size) {
    TORCH_CHECK(frames.dim() == 4, "patchify expects B x C x H x W");
    auto B = frames.size(0), C = frames.size(1), H = frames.size(2), W = frames.size(3);
    TORCH_CHECK(H % patch_size == 0 && W % patch_size == 0,
                "image dims must be divisible by patch size");
    int64_t gh = H / patch_size, gw = W / patch_size;
    auto x = frames.reshape({B, C, gh, patch_size, gw, patch_size});
    // B, gh, gw, C, p, p  ->  B, N_p, C*p*p
    x = x.permute({0, 2, 4, 1, 3, 5}).contiguous();
    return x.reshape({B, gh * gw, C * patch_size * patch_size});
}

torch::Tensor frames_to_tensor(const std::vector<const Image*>& frames,
                               const std::array<double, 3>& mean,
                               const std::array<double, 3>& std,
                               torch::Dtype dtype) {
    int64_t B = static_cast<int64_t>(frames.size());
    auto out = torch::empty({B, kImageChannels, kImageSize, kImageSize}, dtype);
    for (int64_t b = 0; b < B; ++b) {
        const Image& img = *frames[b];
        TORCH_CHECK(img.size() == static_cast<size_t>(kImageSize) * kImageSize * kImageChannels,
                    "unexpected image size");
        auto t = torch::from_blob(const_cast<uint8_t*>(img.data()),
                                  {kImageSize, kImageSize, kImageChannels}, torch::kUInt8);
        out[b] = t.permute({2, 0, 1}).to(dtype).div(255.0);
    }
    auto m = torch::tensor({mean[0], mean[1], mean[2]}, dtype).reshape({1, 3, 1, 1});
    auto s = torch::tensor({std[0], std[1], std[2]}, dtype).reshape({1, 3, 1, 1});
    return (out - m) / s;
}

ViTEncoderImpl::ViTEncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
    TORCH_CHECK(cfg.image_size % cfg.patch_size == 0, "image size not divisible by patch size");
    patch_embed = register_module("patch_embed", torch::nn::Linear(cfg.patch_dim(), cfg.width));
    slot_proj = register_module("slot_proj", torch::nn::Linear(cfg.width, cfg.slot_dim));
    pos_emb = register_parameter("pos_emb", torch::randn({cfg.n_patches(), cfg.width}) * 0.02);
    slot_tokens = register_parameter("slot_tokens", torch::randn({cfg.num_slots, cfg.width}) * 0.02);
    for (int i = 0; i < cfg.depth; ++i) {
        auto block = TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio);
        blocks.push_back(register_module("block" + std::to_string(i), block));
    }
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
}

TokenBundle ViTEncoderImpl::encode(const torch::Tensor& frames, const MaskSpec& mask) {
    mask.validate(cfg_.n_patches());
    TORCH_CHECK(!mask.visible.empty(), "encode needs at least one visible patch");
    auto B = frames.size(0);
    auto vis = mask.visible_tensor();
    auto patches = patchify(frames, cfg_.patch_size).index_select(1, vis);
    auto tok = patch_embed->forward(patches) + pos_emb.index_select(0, vis).unsqueeze(0);
    auto slots = slot_tokens.unsqueeze(0).expand({B, cfg_.num_slots, cfg_.width});
    auto x = torch::cat({slots, tok}, 1);
    for (auto& block : blocks) x = block->forward(x);
    x = norm->forward(x);
    TokenBundle bundle;
    bundle.z_s = slot_proj->forward(x.slice(1, 0, cfg_.num_slots));
    bundle.z_p = x.slice(1, cfg_.num_slots);
    bundle.positions = vis;
    return bundle;
}

TokenBundle ViTEncoderImpl::encode_full(const torch::Tensor& frames) {
    return encode(frames, full_visibility_mask(cfg_.n_patches()));
}

}  // namespace djepa
