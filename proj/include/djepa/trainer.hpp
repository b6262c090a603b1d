#pragma once

#include <filesystem>
#include <string>

#include "djepa/objectives.hpp"

namespace djepa {

// Linear warmup to base over warmup_frac * total steps, then cosine decay to 0.
double lr_at(int64_t step, int64_t total, double base, double warmup_frac);

// Linear EMA momentum ramp from m0 to m1 over training.
double momentum_at(int64_t step, int64_t total, double m0, double m1);

// Quantization-loss weight ramp over the first warmup_frac of training.
double vq_weight_at(int64_t step, int64_t total, double warmup_frac);

struct TrainConfig {
    std::string dataset;
    std::string out_dir = "runs/tokenizer";
    std::string preset = "djepa";        // djepa | ijepa
    std::string backbone = "desk";       // desk | vit-base
    int num_slots = 8;                   // L
    int slot_dim = 96;                   // D_s
    int codebook_size = 1024;            // K_s
    double mask_ratio_lo = 0.4;
    double mask_ratio_hi = 0.6;
    int batch_size = 16;
    int64_t total_steps = 20000;
    double base_lr = 1e-3;
    double warmup_frac = 0.05;
    double weight_decay = 0.05;
    double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
    double beta = 0.25;
    double gamma = 0.99;
    double vq_warmup_frac = 0.15;
    double momentum_start = 0.996;
    double momentum_end = 1.0;
    int64_t checkpoint_every = 2000;
    int64_t reinit_every = 500;
    double reinit_threshold = 1e-3;
    uint64_t seed = 0;

    TokenizerConfig tokenizer_config() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& json_text);
    static TrainConfig load(const std::filesystem::path& path);
};

// Single-archive checkpoint: named parameter/buffer tensors, config echo,
// step counter, plus optional optimizer and RNG state for resumption.
void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const std::string& config_json, int64_t step,
                     torch::optim::Optimizer* optimizer = nullptr,
                     const std::string& rng_state = "");

struct CheckpointMeta {
    std::string config_json;
    int64_t step = 0;
    std::string rng_state;
};
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
void load_checkpoint_into(const std::filesystem::path& path, torch::nn::Module& module,
                          torch::optim::Optimizer* optimizer = nullptr);

TokenizerModel load_tokenizer(const std::filesystem::path& path, TrainConfig* out_config = nullptr);

// Runs the tokenizer training loop; returns the final checkpoint path.
// Metrics are appended to <out_dir>/metrics.csv, one row per step.
// stop_after > 0 interrupts the run after that step (checkpointed), leaving a
// resumable <out_dir>/checkpoint.pt; used to exercise resumption.
std::filesystem::path train_tokenizer(const TrainConfig& cfg,
                                      const std::filesystem::path& resume = {},
                                      int64_t stop_after = -1);

// Baseline preset: VQ off, P2P only (the continuous latent-prediction setup).
std::filesystem::path train_ijepa_baseline(TrainConfig cfg);

}  // namespace djepa
