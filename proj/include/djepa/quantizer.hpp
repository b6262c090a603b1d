#pragma once

#include <torch/torch.h>

#include "djepa/common.hpp"

namespace djepa {

struct CodebookConfig {
    int num_codes = 1024;  // K_s
    int dim = 96;          // D_s
    double beta = 0.25;    // commitment coefficient
    double decay = 0.99;   // EMA decay gamma
    double eps = 1e-5;     // Laplace floor on counts
};

struct QuantResult {
    torch::Tensor indices;          // N, int64
    torch::Tensor quantized;        // N x D, exact codebook rows (detached)
    torch::Tensor straight_through; // N x D, forward == quantized, backward == identity on z
    torch::Tensor commit_loss;      // scalar, beta * mean ||z - sg(q)||^2
};

struct CodebookStats {
    std::vector<int64_t> histogram;
    double perplexity = 0.0;
    int dead_codes = 0;
};

struct CodebookImpl : torch::nn::Module {
    explicit CodebookImpl(const CodebookConfig& cfg);

    // Nearest codeword per row, ties broken toward the smallest index.
    QuantResult quantize(const torch::Tensor& z);
    // Same losses/outputs but with assignments pinned (used for gradient checks).
    QuantResult quantize_with_indices(const torch::Tensor& z, const torch::Tensor& indices);

    // EMA update of counts/sums from a batch of assigned vectors, then
    // codes[k] = ema_sums[k] / max(ema_counts[k], eps).
    void ema_update(const torch::Tensor& z, const torch::Tensor& indices);

    // Initialize codes from sampled rows of a data batch.
    void init_from(const torch::Tensor& rows, Rng& rng);
    bool initialized() const { return initialized_.item<bool>(); }

    // Reset codes with ema_counts below threshold to random rows of the pool.
    // Returns the number of codes reset.
    int reinit_dead(const torch::Tensor& pool, double count_threshold, Rng& rng);

    CodebookConfig cfg_;
    torch::Tensor codes;       // K x D
    torch::Tensor ema_counts;  // K
    torch::Tensor ema_sums;    // K x D
    torch::Tensor initialized_;
};
TORCH_MODULE(Codebook);

// Usage diagnostics from a window of assignment indices.
CodebookStats codebook_stats(const torch::Tensor& indices, int num_codes);

// Exact squared-distance argmin with smallest-index tie-break; chunked over
// rows to bound memory.
torch::Tensor nearest_code_indices(const torch::Tensor& z, const torch::Tensor& codes);

}  // namespace djepa
