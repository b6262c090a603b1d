#pragma once

#include <filesystem>

#include "djepa/objectives.hpp"
#include "djepa/trainer.hpp"

namespace djepa {

// Single affine classifier over pooled tokens.
struct ProbeHeadImpl : torch::nn::Module {
    ProbeHeadImpl(int in_dim, int n_classes);
    torch::Tensor forward(const torch::Tensor& pooled);  // B x in_dim -> B x n_classes

    torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(ProbeHead);

struct ProbeTrainConfig {
    int64_t total_steps = 5000;
    int batch_size = 256;
    double base_lr = 0.1;
    double warmup_frac = 0.05;
    double weight_decay = 1e-6;
    double momentum = 0.9;
    std::string optimizer = "lars";  // lars | sgd
    uint64_t seed = 0;
};

// Layer-adaptive learning-rate SGD with momentum; plain momentum SGD is the
// configured fallback.
ProbeHead train_prober(const torch::Tensor& tokens, const torch::Tensor& labels, int n_classes,
                       const ProbeTrainConfig& cfg);

torch::Tensor probe_predict(ProbeHead& head, const torch::Tensor& pooled);

double probe_accuracy(ProbeHead& head, const torch::Tensor& tokens, const torch::Tensor& labels);

// Blinking-Ball preprocessing: every ball pixel becomes white, background
// stays black. Idempotent by construction (disc membership, not color).
Image reset_to_white(const Image& frame);

struct DecoderConfig {
    int width = 64;
    int depth = 3;
    int heads = 4;
    double mlp_ratio = 4.0;
    int patch_size = 8;
    int token_dim = 96;  // dimension of the key/value tokens
    int n_classes = kBallPixelClasses;

    std::string to_json() const;
    static DecoderConfig from_json(const std::string& text);
};

// Transformer decoder without causal mask: patchified white-reset frames are
// the queries, tokenizer outputs the cross-attention keys/values, and the
// output is a per-pixel class map.
struct PixelDecoderImpl : torch::nn::Module {
    explicit PixelDecoderImpl(const DecoderConfig& cfg);

    // white_frames: B x C x H x W (normalized); tokens: B x T x token_dim.
    // Returns logits B x n_classes x H x W.
    torch::Tensor forward(const torch::Tensor& white_frames, const torch::Tensor& tokens);

    DecoderConfig cfg_;
    torch::nn::Linear query_embed{nullptr}, mem_proj{nullptr}, out_proj{nullptr};
    torch::Tensor pos_emb;
    std::vector<CrossBlock> blocks;
    torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PixelDecoder);

// Deterministic per-pixel argmax. Returns B x H x W uint8 class map.
torch::Tensor decode_pixels(PixelDecoder& decoder, const torch::Tensor& tokens,
                            const torch::Tensor& white_frames);

struct DecoderTrainConfig {
    std::string tokenizer_ckpt;
    std::string dataset;
    std::string out_dir = "runs/decoder";
    std::string token_source = "semantic";  // semantic (quantized) | patch (projected patch tokens)
    int width = 64;
    int depth = 3;
    int heads = 4;
    double mlp_ratio = 4.0;
    int batch_size = 16;
    int64_t total_steps = 4000;
    double base_lr = 1e-3;
    double warmup_frac = 0.05;
    double weight_decay = 0.01;
    int64_t checkpoint_every = 1000;
    uint64_t seed = 0;

    std::string to_json() const;
    static DecoderTrainConfig from_json(const std::string& text);
    static DecoderTrainConfig load(const std::filesystem::path& path);
};

std::filesystem::path train_decoder(const DecoderTrainConfig& cfg);
PixelDecoder load_decoder(const std::filesystem::path& path, DecoderConfig* out_cfg = nullptr);

}  // namespace djepa
