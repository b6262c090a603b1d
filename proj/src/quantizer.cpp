#include "djepa/quantizer.hpp"

#include <cmath>

namespace djepa {

CodebookImpl::CodebookImpl(const CodebookConfig& cfg) : cfg_(cfg) {
    TORCH_CHECK(cfg.num_codes > 0 && cfg.dim > 0, "codebook needs positive size");
    TORCH_CHECK(cfg.decay > 0.0 && cfg.decay <= 1.0, "decay must be in (0,1]");
    codes = register_buffer("codes", torch::randn({cfg.num_codes, cfg.dim}) * 0.02);
    ema_counts = register_buffer("ema_counts", torch::ones({cfg.num_codes}));
    ema_sums = register_buffer("ema_sums", codes.clone());
    initialized_ = register_buffer("initialized", torch::zeros({}, torch::kBool));
}

torch::Tensor nearest_code_indices(const torch::Tensor& z, const torch::Tensor& codes) {
    TORCH_CHECK(z.dim() == 2 && codes.dim() == 2 && z.size(1) == codes.size(1),
                "nearest_code_indices: shape mismatch");
    TORCH_CHECK(z.isfinite().all().item<bool>(), "quantize: non-finite input");
    int64_t n = z.size(0), k = codes.size(0);
    auto out = torch::empty({n}, torch::kInt64);
    auto* out_p = out.data_ptr<int64_t>();
    const int64_t chunk = std::max<int64_t>(1, (1 << 22) / std::max<int64_t>(k, 1));
    for (int64_t lo = 0; lo < n; lo += chunk) {
        int64_t hi = std::min(n, lo + chunk);
        auto d = (z.slice(0, lo, hi).unsqueeze(1) - codes.unsqueeze(0))
                     .pow(2)
                     .sum(-1)
                     .to(torch::kDouble)
                     .contiguous();
        auto acc = d.accessor<double, 2>();
        for (int64_t i = 0; i < hi - lo; ++i) {
            int64_t best = 0;
            double best_d = acc[i][0];
            for (int64_t j = 1; j < k; ++j) {
                if (acc[i][j] < best_d) {
                    best_d = acc[i][j];
                    best = j;
                }
            }
            out_p[lo + i] = best;
        }
    }
    return out;
}

QuantResult CodebookImpl::quantize(const torch::Tensor& z) {
    return quantize_with_indices(z, nearest_code_indices(z, codes));
}

QuantResult CodebookImpl::quantize_with_indices(const torch::Tensor& z, const torch::Tensor& indices) {
    TORCH_CHECK(indices.dim() == 1 && indices.size(0) == z.size(0), "indices/rows mismatch");
    QuantResult res;
    res.indices = indices;
    res.quantized = codes.index_select(0, indices).detach();
    // Forward is bit-exactly the codebook row; backward is identity on z.
    res.straight_through = res.quantized + (z - z.detach());
    res.commit_loss = cfg_.beta * (z - res.quantized).pow(2).mean();
    return res;
}

void CodebookImpl::ema_update(const torch::Tensor& z, const torch::Tensor& indices) {
    TORCH_CHECK(indices.size(0) == z.size(0), "indices/rows mismatch");
    torch::NoGradGuard guard;
    auto counts = torch::zeros({cfg_.num_codes}, z.options());
    counts.index_add_(0, indices, torch::ones({z.size(0)}, z.options()));
    auto sums = torch::zeros_like(ema_sums);
    sums.index_add_(0, indices, z);
    ema_counts.mul_(cfg_.decay).add_(counts, 1.0 - cfg_.decay);
    ema_sums.mul_(cfg_.decay).add_(sums, 1.0 - cfg_.decay);
    codes.copy_(ema_sums / ema_counts.clamp_min(cfg_.eps).unsqueeze(1));
}

void CodebookImpl::init_from(const torch::Tensor& rows, Rng& rng) {
    TORCH_CHECK(rows.dim() == 2 && rows.size(1) == cfg_.dim, "init_from: bad rows");
    TORCH_CHECK(rows.size(0) > 0, "init_from: empty batch");
    torch::NoGradGuard guard;
    auto n = rows.size(0);
    for (int64_t k = 0; k < cfg_.num_codes; ++k) {
        int64_t pick = (k < n) ? k : rng.uniform_int(0, static_cast<int>(n) - 1);
        codes[k].copy_(rows[pick]);
    }
    ema_counts.fill_(1.0);
    ema_sums.copy_(codes);
    initialized_.fill_(true);
}

int CodebookImpl::reinit_dead(const torch::Tensor& pool, double count_threshold, Rng& rng) {
    TORCH_CHECK(pool.dim() == 2 && pool.size(1) == cfg_.dim && pool.size(0) > 0,
                "reinit_dead: bad pool");
    torch::NoGradGuard guard;
    auto counts = ema_counts.to(torch::kDouble).contiguous();
    auto acc = counts.accessor<double, 1>();
    int reset = 0;
    for (int64_t k = 0; k < cfg_.num_codes; ++k) {
        if (acc[k] >= count_threshold) continue;
        auto row = pool[rng.uniform_int(0, static_cast<int>(pool.size(0)) - 1)];
        codes[k].copy_(row);
        ema_counts[k] = 1.0;
        ema_sums[k].copy_(row);
        ++reset;
    }
    return reset;
}

CodebookStats codebook_stats(const torch::Tensor& indices, int num_codes) {
    CodebookStats stats;
    stats.histogram.assign(num_codes, 0);
    auto idx = indices.reshape({-1}).to(torch::kInt64).contiguous();
    auto acc = idx.accessor<int64_t, 1>();
    for (int64_t i = 0; i < idx.size(0); ++i) {
        TORCH_CHECK(acc[i] >= 0 && acc[i] < num_codes, "index out of range");
        stats.histogram[acc[i]]++;
    }
    double total = static_cast<double>(idx.size(0));
    double entropy = 0.0;
    for (int k = 0; k < num_codes; ++k) {
        if (stats.histogram[k] == 0) {
            stats.dead_codes++;
            continue;
        }
        double p = stats.histogram[k] / total;
        entropy -= p * std::log(p);
    }
    stats.perplexity = total > 0 ? std::exp(entropy) : 0.0;
    return stats;
}

}  // namespace djepa
