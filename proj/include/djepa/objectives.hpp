#pragma once

#include <torch/torch.h>

#include <optional>

#include "djepa/backbone.hpp"
#include "djepa/quantizer.hpp"

namespace djepa {

struct PredictorConfig {
    int width = 192;
    int depth = 2;
    int heads = 4;
    double mlp_ratio = 2.0;
};

// Predicts patch tokens at target positions from an input token set, with
// learned positional queries. Serves both S2P (semantic inputs) and P2P
// (visible patch inputs).
struct PatchPredictorImpl : torch::nn::Module {
    PatchPredictorImpl(const PredictorConfig& cfg, int in_dim, int out_dim, int n_positions);

    // tokens: B x T x in_dim. token_positions (optional): patch indices the
    // input tokens occupy; must be disjoint from target_positions.
    torch::Tensor forward(const torch::Tensor& tokens,
                          const std::optional<torch::Tensor>& token_positions,
                          const torch::Tensor& target_positions);

    PredictorConfig cfg_;
    int n_positions_;
    torch::nn::Linear in_proj{nullptr}, out_proj{nullptr};
    torch::Tensor mask_token;  // width
    torch::Tensor pos_emb;     // n_positions x width
    std::vector<TransformerBlock> blocks;
    torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PatchPredictor);

// Predicts the L continuous semantic tokens from visible patch tokens.
struct SemanticPredictorImpl : torch::nn::Module {
    SemanticPredictorImpl(const PredictorConfig& cfg, int in_dim, int out_dim, int num_slots,
                          int n_positions);

    torch::Tensor forward(const torch::Tensor& z_p, const torch::Tensor& positions);

    PredictorConfig cfg_;
    int num_slots_;
    torch::nn::Linear in_proj{nullptr}, out_proj{nullptr};
    torch::Tensor slot_queries;  // L x width
    torch::Tensor pos_emb;       // n_positions x width
    std::vector<TransformerBlock> blocks;
    torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(SemanticPredictor);

struct LossBreakdown {
    double l_s2p = 0.0;
    double l_p2s = 0.0;
    double l_p2p = 0.0;
    double l_vq = 0.0;
    double total = 0.0;
    double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
};

struct TokenizerPreset {
    bool use_vq = true;
    bool use_s2p = true;
    bool use_p2s = true;
};

struct TokenizerConfig {
    EncoderConfig encoder;
    CodebookConfig codebook;
    PredictorConfig predictor;
    TokenizerPreset preset;
    double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
};

struct TokenizerForward {
    LossBreakdown losses;
    torch::Tensor total;              // scalar, differentiable
    torch::Tensor context_indices;    // (B*L), empty when VQ disabled
    torch::Tensor target_indices;     // (B*L), target-side assignments for codebook EMA
    torch::Tensor target_semantic;    // (B*L) x D_s, detached target z_s pool
};

// Context/target encoder pair, shared codebook, and the three predictors.
struct TokenizerModelImpl : torch::nn::Module {
    explicit TokenizerModelImpl(const TokenizerConfig& cfg);

    // One loss evaluation on a batch of frames under a shared mask. VQ
    // assignments can be pinned for gradient checks; pinning additionally a
    // fixed quantization residual replaces the straight-through output with
    // the smooth surrogate z + residual, which finite differences can probe
    // (the raw straight-through forward is constant in z by construction).
    TokenizerForward forward_losses(const torch::Tensor& frames, const MaskSpec& mask,
                                    double vq_weight = 1.0,
                                    const std::optional<torch::Tensor>& frozen_ctx_indices = std::nullopt,
                                    const std::optional<torch::Tensor>& frozen_tgt_indices = std::nullopt,
                                    const std::optional<torch::Tensor>& frozen_ctx_residual = std::nullopt);

    // Parameters that receive gradient updates (context encoder + predictors).
    std::vector<torch::Tensor> trainable_parameters();

    // EMA update of the target encoder from the context encoder.
    void update_target(double momentum);

    // Discrete semantic tokens of frames via the target encoder: returns
    // {indices B x L, quantized B x L x D_s, continuous B x L x D_s}.
    struct Tokens {
        torch::Tensor indices;
        torch::Tensor quantized;
        torch::Tensor continuous;
        torch::Tensor patch_tokens;  // B x N_p x width
    };
    Tokens tokenize(const torch::Tensor& frames);

    TokenizerConfig cfg_;
    ViTEncoder context_enc{nullptr}, target_enc{nullptr};
    Codebook codebook{nullptr};
    PatchPredictor s2p{nullptr}, p2p{nullptr};
    SemanticPredictor p2s{nullptr};
};
TORCH_MODULE(TokenizerModel);

}  // namespace djepa
