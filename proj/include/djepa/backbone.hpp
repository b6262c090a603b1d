#pragma once

#include <torch/torch.h>

#include <vector>

#include "djepa/common.hpp"
#include "djepa/datagen.hpp"
#include "djepa/nn.hpp"

namespace djepa {

// Partition of patch positions into visible and target sets.
struct MaskSpec {
    std::vector<int64_t> visible;
    std::vector<int64_t> targets;

    void validate(int n_patches) const;
    torch::Tensor visible_tensor() const;
    torch::Tensor target_tensor() const;
};

// |targets| = round(r * n) with r uniform in [lo, hi]; targets drawn uniformly
// without replacement, visible = complement. Both lists sorted ascending.
MaskSpec sample_mask(int n_patches, double ratio_lo, double ratio_hi, Rng& rng);
MaskSpec full_visibility_mask(int n_patches);

// B x C x H x W -> B x N_p x (C*p*p), patches in row-major order, channel
// slowest within a patch.
torch::Tensor patchify(const torch::Tensor& frames, int patch_size);

// uint8 HWC images -> normalized float tensor B x C x H x W:
// scale to [0,1], then per-channel (x - mean) / std.
torch::Tensor frames_to_tensor(const std::vector<const Image*>& frames,
                               const std::array<double, 3>& mean,
                               const std::array<double, 3>& std,
                               torch::Dtype dtype = torch::kFloat32);

struct EncoderConfig {
    int image_size = kImageSize;
    int patch_size = 8;
    int width = 192;
    int depth = 4;
    int heads = 4;
    double mlp_ratio = 2.0;
    int num_slots = 8;   // L
    int slot_dim = 96;   // D_s

    int n_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
    int patch_dim() const { return kImageChannels * patch_size * patch_size; }
};

struct TokenBundle {
    torch::Tensor z_s;        // B x L x D_s
    torch::Tensor z_p;        // B x |positions| x width
    torch::Tensor positions;  // int64, patch indices covered by z_p
};

// ViT over [semantic slots; visible patch embeddings] with full bidirectional
// self-attention. Slot outputs are projected to the semantic token dimension.
struct ViTEncoderImpl : torch::nn::Module {
    explicit ViTEncoderImpl(const EncoderConfig& cfg);

    TokenBundle encode(const torch::Tensor& frames, const MaskSpec& mask);
    TokenBundle encode_full(const torch::Tensor& frames);

    EncoderConfig cfg_;
    torch::nn::Linear patch_embed{nullptr};
    torch::nn::Linear slot_proj{nullptr};
    torch::Tensor pos_emb;      // N_p x width
    torch::Tensor slot_tokens;  // L x width (z_s^0)
    std::vector<TransformerBlock> blocks;
    torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(ViTEncoder);

}  // namespace djepa
