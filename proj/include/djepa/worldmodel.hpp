#pragma once

#include <filesystem>
#include <optional>

#include "djepa/trainer.hpp"

namespace djepa {

enum class WMVariant { I2I, R2I, R2R_Concat, R2R_AvgPool };

std::string to_string(WMVariant v);
WMVariant wm_variant_from_string(const std::string& s);

struct WMConfig {
    WMVariant variant = WMVariant::I2I;
    int width = 192;
    int depth = 2;
    int heads = 4;
    double mlp_ratio = 2.0;
    int tokens_per_frame = 8;  // L for discrete variants, 64 for R2R_Concat, 1 for R2R_AvgPool
    int token_dim = 96;        // D_s (R2I) or backbone width (R2R)
    int codebook_size = 256;   // K_s, discrete variants only
    int h_c = 4;
    int h_p = 4;

    bool discrete() const { return variant == WMVariant::I2I || variant == WMVariant::R2I; }
    std::string to_json() const;
    static WMConfig from_json(const std::string& text);
};

// Non-causal transformer over the conditioning window plus learned query
// tokens for the H_p predicted frames.
struct WorldModelImpl : torch::nn::Module {
    explicit WorldModelImpl(const WMConfig& cfg);

    // Discrete variants: window is B x H_c x L int64 (I2I) or B x H_c x L x D
    // vectors (R2I); output logits B x H_p x L x K.
    // Continuous variants: window B x H_c x T x D; output B x H_p x T x D.
    torch::Tensor forward(const torch::Tensor& window);

    torch::Tensor embed_window(const torch::Tensor& window);

    WMConfig cfg_;
    torch::nn::Embedding index_embed{nullptr};
    torch::nn::Linear vec_embed{nullptr};
    torch::Tensor time_emb;   // (h_c + h_p) x width
    torch::Tensor slot_emb;   // tokens_per_frame x width
    torch::Tensor query_token;
    std::vector<TransformerBlock> blocks;
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(WorldModel);

struct RolloutTrace {
    WMVariant variant = WMVariant::I2I;
    int h_c = 4, h_p = 4;
    // Discrete: B x steps x L int64 indices. Continuous: B x steps x T x D.
    torch::Tensor indices;
    torch::Tensor vectors;

    int64_t steps() const { return variant == WMVariant::I2I || variant == WMVariant::R2I
                                       ? indices.size(1) : vectors.size(1); }
};

// Autoregressive rollout: predict H_p frames, append, slide the window to the
// most recent H_c frames. Discrete variants feed back argmax indices; for R2I
// the fed-back vectors are the exact codebook rows of those indices.
// `codebook_rows` (K x D) is required for R2I.
RolloutTrace rollout(WorldModel& model, const torch::Tensor& conditioning, int total_steps,
                     const std::optional<torch::Tensor>& codebook_rows = std::nullopt);

void save_trace(const RolloutTrace& trace, const std::filesystem::path& path);
RolloutTrace load_trace(const std::filesystem::path& path);

struct WMTrainConfig {
    std::string variant = "i2i";
    std::string tokenizer_ckpt;
    std::string dataset;
    std::string out_dir = "runs/worldmodel";
    int width = 192;
    int depth = 2;
    int heads = 4;
    double mlp_ratio = 2.0;
    int h_c = 4;
    int h_p = 4;
    int batch_size = 32;
    int64_t total_steps = 4000;
    double base_lr = 1e-3;
    double warmup_frac = 0.05;
    double weight_decay = 0.01;
    int64_t checkpoint_every = 1000;
    uint64_t seed = 0;

    std::string to_json() const;
    static WMTrainConfig from_json(const std::string& text);
    static WMTrainConfig load(const std::filesystem::path& path);
};

// Per-frame token streams of a dataset under a frozen tokenizer.
struct TokenCache {
    WMVariant variant;
    // sequences x T x L (int64) for discrete; sequences x T x tokens x D for continuous.
    std::vector<torch::Tensor> indices;
    std::vector<torch::Tensor> vectors;
};
TokenCache tokenize_dataset(TokenizerModel& tokenizer, const Dataset& ds, WMVariant variant,
                            int tokenize_batch = 64);

std::filesystem::path train_worldmodel(const WMTrainConfig& cfg);

WorldModel load_worldmodel(const std::filesystem::path& path, WMConfig* out_cfg = nullptr);

}  // namespace djepa
