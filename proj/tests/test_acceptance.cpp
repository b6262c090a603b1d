#include "djepa/eval.hpp"
#include "djepa/nn.hpp"

// doctest must come after torch: c10's logging header clobbers CHECK.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>

#include <json.hpp>

using namespace djepa;

namespace {

void report(int n, const char* what, bool ok) {
    std::printf("[acceptance %d/9] %s: %s\n", n, what, ok ? "PASS" : "FAIL");
    std::fflush(stdout);
    CHECK(ok);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TokenizerConfig toy_config() {
    TokenizerConfig cfg;
    cfg.encoder.image_size = 16;
    cfg.encoder.patch_size = 8;  // smallest square grid: 4 patches
    cfg.encoder.width = 16;
    cfg.encoder.depth = 1;
    cfg.encoder.heads = 2;
    cfg.encoder.mlp_ratio = 1.0;
    cfg.encoder.num_slots = 2;
    cfg.encoder.slot_dim = 8;
    cfg.codebook.num_codes = 4;
    cfg.codebook.dim = 8;
    cfg.predictor.width = 16;
    cfg.predictor.depth = 1;
    cfg.predictor.heads = 2;
    cfg.predictor.mlp_ratio = 1.0;
    return cfg;
}

MaskSpec half_mask() {
    MaskSpec mask;
    mask.visible = {0, 3};
    mask.targets = {1, 2};
    return mask;
}

WMConfig tiny_wm(WMVariant v) {
    WMConfig cfg;
    cfg.variant = v;
    cfg.width = 32;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 1.0;
    cfg.tokens_per_frame = 4;
    cfg.token_dim = 8;
    cfg.codebook_size = 12;
    cfg.h_c = 3;
    cfg.h_p = 2;
    return cfg;
}

nlohmann::json micro_manifest(const std::filesystem::path& out_dir) {
    return nlohmann::json{
        {"task", "sprites"},
        {"out_dir", out_dir.string()},
        {"seed", 7},
        {"data", {{"train_count", 6}, {"train_length", 8}, {"test_count", 3}, {"test_length", 4}}},
        {"tokenizer",
         {{"total_steps", 4}, {"batch_size", 2}, {"codebook_size", 16}, {"checkpoint_every", 4}}},
        {"baseline_tokenizer", {{"total_steps", 4}, {"batch_size", 2}, {"checkpoint_every", 4}}},
        {"worldmodel", {{"total_steps", 4}, {"batch_size", 2}, {"checkpoint_every", 4}}},
        {"baseline_worldmodel", {{"total_steps", 4}, {"batch_size", 2}, {"checkpoint_every", 4}}},
        {"probe", {{"total_steps", 20}}},
        {"eval", {{"horizon", 6}}}};
}

}  // namespace

TEST_CASE("criterion 1: quantization exactness") {
    auto t0 = std::chrono::steady_clock::now();
    torch::manual_seed(101);
    bool ok = true;

    CodebookConfig cfg;
    cfg.num_codes = 1024;
    cfg.dim = 64;
    Codebook cb(cfg);
    Rng rng(101);
    cb->init_from(torch::randn({1024, 64}), rng);
    auto z = torch::randn({1000, 64});
    auto res = cb->quantize(z);

    // Brute-force distance scan over all 1024 codes, in double.
    auto zd = z.to(torch::kDouble);
    auto cd = cb->codes.to(torch::kDouble);
    auto d = torch::cdist(zd, cd);
    auto oracle = d.argmin(1);
    ok &= torch::equal(res.indices, oracle);

    // Idempotence: quantizing the quantized vectors is the identity.
    auto again = cb->quantize(res.quantized);
    ok &= torch::equal(again.indices, res.indices);
    ok &= torch::equal(again.quantized, res.quantized);

    // Tie-break determinism: duplicated rows always resolve to the smaller index.
    Codebook dup(CodebookConfig{8, 4, 0.25, 0.99, 1e-5});
    auto rows = torch::randn({4, 4}).repeat({2, 1});  // rows i and i+4 identical
    Rng rng2(5);
    dup->init_from(rows, rng2);
    auto tie = dup->quantize(rows);
    ok &= (tie.indices < 4).all().item<bool>();
    ok &= torch::equal(dup->quantize(rows).indices, tie.indices);

    ok &= seconds_since(t0) < 10.0;
    report(1, "quantization matches brute-force scan, idempotent, deterministic ties", ok);
}

TEST_CASE("criterion 2: gradient fidelity on a toy model") {
    auto t0 = std::chrono::steady_clock::now();
    torch::manual_seed(102);
    bool ok = true;

    TokenizerModel model(toy_config());
    model->to(torch::kDouble);
    Rng rng(102);
    model->codebook->init_from(torch::randn({8, 8}, torch::kDouble), rng);
    auto frames = torch::rand({1, 3, 16, 16}, torch::kDouble);
    auto mask = half_mask();

    auto base = model->forward_losses(frames, mask);
    auto ctx_idx = base.context_indices;
    auto tgt_idx = base.target_indices;
    torch::Tensor residual;
    {
        torch::NoGradGuard guard;
        auto flat = model->context_enc->encode(frames, mask).z_s.reshape({-1, 8});
        residual = model->codebook->codes.index_select(0, ctx_idx) - flat;
    }

    for (auto& p : model->trainable_parameters())
        if (p.grad().defined()) p.mutable_grad().reset();
    model->forward_losses(frames, mask, 1.0, ctx_idx, tgt_idx).total.backward();

    // Every trainable tensor: compare autograd against central differences of
    // the frozen-assignment surrogate at three coordinates per tensor.
    const double h = 1e-6;
    for (auto& p : model->trainable_parameters()) {
        if (!p.grad().defined()) continue;
        auto flat_p = p.view({-1});
        auto flat_g = p.grad().view({-1});
        int64_t n = flat_p.size(0);
        for (int64_t i : {int64_t{0}, n / 2, n - 1}) {
            double orig = flat_p[i].item<double>();
            double an = flat_g[i].item<double>();
            torch::NoGradGuard guard;
            flat_p[i] = orig + h;
            double fp =
                model->forward_losses(frames, mask, 1.0, ctx_idx, tgt_idx, residual).losses.total;
            flat_p[i] = orig - h;
            double fm =
                model->forward_losses(frames, mask, 1.0, ctx_idx, tgt_idx, residual).losses.total;
            flat_p[i] = orig;
            double fd = (fp - fm) / (2 * h);
            ok &= std::abs(fd - an) / std::max(1.0, std::abs(fd)) < 1e-4;
        }
    }

    // The target encoder accumulates exactly zero gradient.
    for (auto& p : model->target_enc->parameters()) ok &= !p.grad().defined() && !p.requires_grad();

    ok &= seconds_since(t0) < 60.0;
    report(2, "autograd matches finite differences; target encoder gets zero gradient", ok);
}

TEST_CASE("criterion 3: baseline reduction to plain latent prediction") {
    torch::manual_seed(103);
    bool ok = true;
    auto cfg = toy_config();
    cfg.preset = TokenizerPreset{false, false, false};
    TokenizerModel model(cfg);
    model->to(torch::kDouble);
    auto frames = torch::rand({2, 3, 16, 16}, torch::kDouble);
    auto mask = half_mask();
    auto out = model->forward_losses(frames, mask);

    double expected;
    {
        torch::NoGradGuard guard;
        auto tgt = model->target_enc->encode_full(frames).z_p.index_select(1, mask.target_tensor());
        auto ctx = model->context_enc->encode(frames, mask);
        auto pred = model->p2p->forward(ctx.z_p, ctx.positions, mask.target_tensor());
        expected = (pred - tgt).pow(2).mean().item<double>();
    }
    ok &= std::abs(out.losses.total - expected) < 1e-10;
    ok &= out.losses.l_vq == 0.0 && out.losses.l_s2p == 0.0 && out.losses.l_p2s == 0.0;
    report(3, "continuous preset equals an independent masked-prediction loss to 1e-10", ok);
}

TEST_CASE("criterion 4: pattern generators") {
    bool ok = true;

    // Worked example: Linear, start 0, hop 2 over 7 colors.
    PatternSpec spec;
    spec.kind = PatternKind::Linear;
    spec.start = 0;
    spec.hop = 2;
    auto seq = gen_color_sequence(spec, 8);
    ok &= seq == std::vector<int>{0, 2, 4, 6, 1, 3, 5, 0};

    Rng rng(104);
    for (auto [kind, period] :
         {std::pair{PatternKind::Repeat2, 2}, {PatternKind::Repeat3, 3},
          {PatternKind::Zigzag3, 4} /* a,b,c,b */, {PatternKind::Linear, 7}}) {
        for (int trial = 0; trial < 20; ++trial) {
            auto s = sample_pattern_spec(kind, rng);
            auto colors = gen_color_sequence(s, 100);
            for (size_t i = 0; i + period < colors.size(); ++i)
                ok &= colors[i] == colors[i + static_cast<size_t>(period)];
            if (kind == PatternKind::Linear)
                for (size_t i = 0; i + 7 <= colors.size(); ++i) {
                    std::vector<bool> seen(7, false);
                    for (size_t j = i; j < i + 7; ++j) seen[colors[j]] = true;
                    for (bool b : seen) ok &= b;
                }
        }
    }
    report(4, "pattern periodicity, full-color windows and the worked example", ok);
}

TEST_CASE("criterion 7: discrete feedback closure over 1000 steps") {
    torch::manual_seed(107);
    bool ok = true;

    {
        WorldModel m(tiny_wm(WMVariant::I2I));
        auto trace = rollout(m, torch::randint(12, {2, 3, 4}), 1000);
        ok &= trace.steps() == 1000;
        ok &= (trace.indices >= 0).all().item<bool>();
        ok &= (trace.indices < 12).all().item<bool>();
    }
    {
        WorldModel m(tiny_wm(WMVariant::R2I));
        auto codes = torch::randn({12, 8});
        auto cond = codes.index({torch::randint(12, {2 * 3 * 4})}).reshape({2, 3, 4, 8});
        auto trace = rollout(m, cond, 1000, codes);
        int violations = 0;
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t s = 0; s < trace.steps(); ++s)
                for (int64_t l = 0; l < 4; ++l) {
                    auto idx = trace.indices[b][s][l].item<int64_t>();
                    if (!torch::equal(trace.vectors[b][s][l], codes[idx])) ++violations;
                }
        ok &= violations == 0;
    }
    report(7, "every fed-back vector is an exact codebook row across 1000 steps", ok);
}

TEST_CASE("criterion 8: exponential-moving-average suites") {
    torch::manual_seed(108);
    bool ok = true;

    // Encoder EMA follows the geometric-decay closed form in double precision.
    auto opts = torch::TensorOptions().dtype(torch::kDouble);
    torch::nn::Linear target(torch::nn::LinearOptions(4, 4)), source(torch::nn::LinearOptions(4, 4));
    target->to(torch::kDouble);
    source->to(torch::kDouble);
    auto t0 = target->weight.detach().clone();
    auto s = source->weight.detach().clone();
    const double m = 0.9;
    for (int k = 0; k < 100; ++k) ema_update(*target, *source, m);
    auto closed = std::pow(m, 100) * t0 + (1.0 - std::pow(m, 100)) * s;
    ok &= (target->weight - closed).abs().max().item<double>() < 1e-10;

    // Codebook EMA converges to the two cluster means on a synthetic stream.
    CodebookConfig ccfg;
    ccfg.num_codes = 2;
    ccfg.dim = 4;
    ccfg.decay = 0.9;
    Codebook cb(ccfg);
    auto mean_a = torch::full({4}, -3.0);
    auto mean_b = torch::full({4}, 3.0);
    Rng rng(108);
    cb->init_from(torch::stack({mean_a + 0.5, mean_b - 0.5}), rng);
    for (int step = 0; step < 400; ++step) {
        auto za = mean_a + 0.01 * torch::randn({32, 4});
        auto zb = mean_b + 0.01 * torch::randn({32, 4});
        auto z = torch::cat({za, zb}, 0);
        auto res = cb->quantize(z);
        cb->ema_update(z, res.indices);
    }
    ok &= (cb->codes[0].to(opts) - mean_a).abs().max().item<double>() < 1e-3;
    ok &= (cb->codes[1].to(opts) - mean_b).abs().max().item<double>() < 1e-3;
    report(8, "encoder decay closed form to 1e-10; codebook converges to cluster means", ok);
}

TEST_CASE("criterion 9: byte-exact reproducibility") {
    bool ok = true;
    auto tmp = std::filesystem::temp_directory_path();

    // Dataset round-trip is bit-exact.
    auto d1 = tmp / "djepa_acc_ds1", d2 = tmp / "djepa_acc_ds2";
    for (auto& d : {d1, d2}) std::filesystem::remove_all(d);
    save_dataset(gen_dataset(Task::Sprites, 3, 5, 109), d1);
    save_dataset(load_dataset(d1), d2);
    for (auto& e : std::filesystem::directory_iterator(d1))
        ok &= hash_file(e.path()) == hash_file(d2 / e.path().filename());

    // Checkpoint round-trip is bit-exact.
    torch::manual_seed(109);
    TokenizerModel model(toy_config());
    Rng rng(109);
    model->codebook->init_from(torch::randn({8, 8}), rng);
    auto c1 = tmp / "djepa_acc_c1.pt", c2 = tmp / "djepa_acc_c2.pt";
    save_checkpoint(c1, *model, "{}", 5, nullptr, "state");
    TokenizerModel other(toy_config());
    load_checkpoint_into(c1, *other);
    save_checkpoint(c2, *other, "{}", 5, nullptr, "state");
    ok &= hash_file(c1) == hash_file(c2);

    // Two full pipeline runs under one seed emit byte-identical metrics.
    auto o1 = tmp / "djepa_acc_run1", o2 = tmp / "djepa_acc_run2";
    for (auto& d : {o1, o2}) std::filesystem::remove_all(d);
    for (auto& [mpath, out] : {std::pair{tmp / "djepa_acc_m1.json", o1},
                               std::pair{tmp / "djepa_acc_m2.json", o2}}) {
        write_text_file_atomic(mpath, micro_manifest(out).dump(2));
        run_experiment(mpath);
    }
    for (auto rel : {"tokenizer/metrics.csv", "tokenizer_baseline/metrics.csv", "wm/metrics.csv",
                     "wm_baseline/metrics.csv", "eval/curves.csv"})
        ok &= hash_file(o1 / rel) == hash_file(o2 / rel);

    for (auto& d : {d1, d2, o1, o2}) std::filesystem::remove_all(d);
    for (auto& f : {c1, c2, tmp / "djepa_acc_m1.json", tmp / "djepa_acc_m2.json"})
        std::filesystem::remove(f);
    report(9, "identical metrics bytes across runs; bit-exact data and checkpoint round-trips", ok);
}
