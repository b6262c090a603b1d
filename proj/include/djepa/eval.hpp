#pragma once

#include <filesystem>

#include "djepa/heads.hpp"
#include "djepa/worldmodel.hpp"

namespace djepa {

struct MetricCurve {
    std::string method;
    std::string metric;
    uint64_t seed = 0;
    std::vector<double> values;  // one value per rollout step

    bool operator==(const MetricCurve&) const = default;
};

struct ProbeSet {
    ProbeHead color{nullptr};
    ProbeHead shape{nullptr};
    ProbeHead position{nullptr};
};

// Pooled probe inputs plus symbolic labels for every frame of a sprite
// dataset. semantic_pool: average over the L quantized semantic tokens;
// otherwise average over patch tokens.
struct PooledSpriteData {
    torch::Tensor pooled;    // N x dim
    torch::Tensor color;     // N int64
    torch::Tensor shape;
    torch::Tensor position;  // row * 4 + col
};
PooledSpriteData pooled_sprite_data(TokenizerModel& tokenizer, const Dataset& ds,
                                    bool semantic_pool, int batch = 64);

ProbeSet train_sprite_probes(TokenizerModel& tokenizer, const Dataset& train,
                             bool semantic_pool, const ProbeTrainConfig& cfg);

// Roll the world model out over `horizon` steps from each test sequence's
// conditioning window and probe color/shape/position at every step.
// Ground-truth labels come from the sequence's pattern spec, so the test set
// only needs H_c rendered frames. When outcome_log is nonempty, a
// per-sequence 0/1 outcome CSV is written there.
std::vector<MetricCurve> eval_dancing(TokenizerModel& tokenizer, WorldModel& wm, ProbeSet& probes,
                                      const Dataset& test, int horizon, const std::string& method,
                                      uint64_t seed, const std::filesystem::path& outcome_log = {});

// Blinking-Ball rollout evaluation: decode every predicted step to a pixel
// class map; report per-step pixel-class accuracy and image-space MSE
// (reported x100, matching the usual scaling).
std::vector<MetricCurve> eval_blinking(TokenizerModel& tokenizer, WorldModel& wm,
                                       PixelDecoder& decoder, const Dataset& test, int horizon,
                                       const std::string& method, uint64_t seed,
                                       const std::filesystem::path& outcome_log = {});

// Teacher-forced decoder quality: decode ground-truth tokens of every frame
// and return mean pixel-class accuracy.
double decoder_teacher_forced_accuracy(TokenizerModel& tokenizer, PixelDecoder& decoder,
                                       const Dataset& ds, bool semantic_tokens, int batch = 32);

void emit_csv(const std::vector<MetricCurve>& curves, const std::filesystem::path& path);
std::vector<MetricCurve> parse_csv(const std::filesystem::path& path);
void emit_plots(const std::vector<MetricCurve>& curves, const std::filesystem::path& dir);

// Staged pipeline: generate data, train tokenizers, world models and heads,
// evaluate, and emit curves/plots/report. Stages whose artifacts already
// exist are skipped, so a rerun of a completed manifest is a no-op.
std::filesystem::path run_experiment(const std::filesystem::path& manifest_path);

}  // namespace djepa
