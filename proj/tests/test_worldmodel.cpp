#include "djepa/worldmodel.hpp"

#include "djepa/datagen.hpp"

// doctest must come after torch: c10's logging header clobbers CHECK.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace djepa;

namespace {

WMConfig tiny(WMVariant v) {
    WMConfig cfg;
    cfg.variant = v;
    cfg.width = 32;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 1.0;
    cfg.tokens_per_frame = (v == WMVariant::R2R_Concat) ? 6 : (v == WMVariant::R2R_AvgPool ? 1 : 4);
    cfg.token_dim = 8;
    cfg.codebook_size = 12;
    cfg.h_c = 3;
    cfg.h_p = 2;
    return cfg;
}

}  // namespace

TEST_CASE("forward shape contracts for all variants") {
    torch::manual_seed(0);
    {
        WorldModel m(tiny(WMVariant::I2I));
        auto window = torch::randint(12, {5, 3, 4});
        CHECK(m->forward(window).sizes() == torch::IntArrayRef({5, 2, 4, 12}));
    }
    {
        WorldModel m(tiny(WMVariant::R2I));
        auto window = torch::randn({5, 3, 4, 8});
        CHECK(m->forward(window).sizes() == torch::IntArrayRef({5, 2, 4, 12}));
    }
    {
        WorldModel m(tiny(WMVariant::R2R_Concat));
        auto window = torch::randn({5, 3, 6, 8});
        CHECK(m->forward(window).sizes() == torch::IntArrayRef({5, 2, 6, 8}));
    }
    {
        WorldModel m(tiny(WMVariant::R2R_AvgPool));
        auto window = torch::randn({5, 3, 1, 8});
        CHECK(m->forward(window).sizes() == torch::IntArrayRef({5, 2, 1, 8}));
    }
}

TEST_CASE("malformed windows and out-of-range indices are rejected") {
    torch::manual_seed(1);
    WorldModel m(tiny(WMVariant::I2I));
    CHECK_THROWS(m->forward(torch::randint(12, {2, 4, 4})));  // wrong h_c
    CHECK_THROWS(m->forward(torch::randint(12, {2, 3, 5})));  // wrong slots
    auto bad = torch::randint(12, {2, 3, 4});
    bad[0][0][0] = 12;  // == codebook_size
    CHECK_THROWS(m->forward(bad));
}

TEST_CASE("index embedding is a pure lookup with sparse gradients") {
    torch::manual_seed(2);
    WorldModel m(tiny(WMVariant::I2I));
    auto w = m->index_embed->weight;
    auto a = w.index({torch::tensor({int64_t{3}})});
    auto b = w.index({torch::tensor({int64_t{3}})});
    CHECK(torch::equal(a, b));

    auto window = torch::zeros({1, 3, 4}, torch::kInt64);  // only index 0 used
    m->forward(window).sum().backward();
    auto g = m->index_embed->weight.grad();
    REQUIRE(g.defined());
    CHECK(g[0].abs().sum().item<double>() > 0);
    for (int k = 1; k < 12; ++k) CHECK(g[k].abs().sum().item<double>() == 0.0);
}

TEST_CASE("rollout base case, window slide and discrete closure") {
    torch::manual_seed(3);
    WorldModel m(tiny(WMVariant::I2I));
    auto conditioning = torch::randint(12, {4, 3, 4});

    CHECK_THROWS(rollout(m, conditioning, 1));  // horizon < h_p

    auto base = rollout(m, conditioning, 2);  // single forward, no feedback
    CHECK(base.steps() == 2);

    auto trace = rollout(m, conditioning, 11);
    CHECK(trace.steps() == 11);
    CHECK(trace.indices.sizes() == torch::IntArrayRef({4, 11, 4}));
    CHECK((trace.indices >= 0).all().item<bool>());
    CHECK((trace.indices < 12).all().item<bool>());

    // The first h_p predictions equal the no-feedback forward's argmax.
    auto logits = m->forward(conditioning);
    CHECK(torch::equal(trace.indices.slice(1, 0, 2), logits.argmax(-1)));
}

TEST_CASE("r2i rollout feeds back exact codebook rows") {
    torch::manual_seed(4);
    WorldModel m(tiny(WMVariant::R2I));
    auto codes = torch::randn({12, 8});
    auto conditioning = codes.index({torch::randint(12, {4 * 3 * 4})}).reshape({4, 3, 4, 8});

    CHECK_THROWS(rollout(m, conditioning, 6));  // codebook rows required
    auto trace = rollout(m, conditioning, 9, codes);
    CHECK(trace.steps() == 9);
    for (int64_t b = 0; b < 4; ++b)
        for (int64_t s = 0; s < 9; ++s)
            for (int64_t l = 0; l < 4; ++l) {
                auto idx = trace.indices[b][s][l].item<int64_t>();
                CHECK(torch::equal(trace.vectors[b][s][l], codes[idx]));
            }
}

TEST_CASE("deterministic rollouts are reproducible and eventually periodic") {
    torch::manual_seed(5);
    WorldModel m(tiny(WMVariant::I2I));
    auto conditioning = torch::randint(12, {1, 3, 4});
    auto t1 = rollout(m, conditioning, 40);
    auto t2 = rollout(m, conditioning, 40);
    CHECK(torch::equal(t1.indices, t2.indices));

    // The window state lives in a finite set, so the index stream of a
    // deterministic model must become periodic well within 12^(4*3) bounds;
    // verify periodicity empirically on the tail.
    auto idx = t1.indices[0];  // steps x 4
    bool periodic = false;
    for (int p = 2; p <= 16 && !periodic; p += 2) {
        bool ok = true;
        for (int s = 20; s + p < 40; ++s)
            if (!torch::equal(idx[s], idx[s + p])) ok = false;
        periodic = ok;
    }
    CHECK(periodic);
}

TEST_CASE("trace save/load round-trip") {
    torch::manual_seed(6);
    WorldModel m(tiny(WMVariant::I2I));
    auto trace = rollout(m, torch::randint(12, {2, 3, 4}), 7);
    auto path = std::filesystem::temp_directory_path() / "djepa_trace_rt.pt";
    save_trace(trace, path);
    auto rt = load_trace(path);
    CHECK(rt.variant == trace.variant);
    CHECK(rt.h_c == trace.h_c);
    CHECK(rt.h_p == trace.h_p);
    CHECK(torch::equal(rt.indices, trace.indices));
    std::filesystem::remove(path);
}

TEST_CASE("continuous rollout feeds back its own predictions") {
    torch::manual_seed(7);
    WorldModel m(tiny(WMVariant::R2R_AvgPool));
    auto conditioning = torch::randn({2, 3, 1, 8});
    auto trace = rollout(m, conditioning, 8);
    CHECK(trace.vectors.sizes() == torch::IntArrayRef({2, 8, 1, 8}));
    // Steps h_p.. are produced from a window containing earlier predictions;
    // recompute step 2..3 by hand from the slid window.
    auto window = torch::cat({conditioning.slice(1, 2, 3), trace.vectors.slice(1, 0, 2)}, 1);
    torch::NoGradGuard guard;
    auto expected = m->forward(window);
    CHECK((expected - trace.vectors.slice(1, 2, 4)).abs().max().item<double>() < 1e-6);
}

TEST_CASE("wm config json round-trip") {
    auto cfg = tiny(WMVariant::R2R_Concat);
    auto rt = WMConfig::from_json(cfg.to_json());
    CHECK(rt.variant == cfg.variant);
    CHECK(rt.tokens_per_frame == 6);
    CHECK(rt.h_c == 3);
    CHECK(rt.h_p == 2);
    CHECK(rt.to_json() == cfg.to_json());
}

TEST_CASE("world-model training freezes the tokenizer and caches coherent tokens") {
    auto tmp = std::filesystem::temp_directory_path();
    auto data_dir = tmp / "djepa_wm_data";
    auto tok_dir = tmp / "djepa_wm_tok";
    auto wm_dir = tmp / "djepa_wm_out";
    for (auto& d : {data_dir, tok_dir, wm_dir}) std::filesystem::remove_all(d);
    save_dataset(gen_dataset(Task::Sprites, 4, 6, 21), data_dir);

    TrainConfig tok_cfg;
    tok_cfg.dataset = data_dir.string();
    tok_cfg.out_dir = tok_dir.string();
    tok_cfg.batch_size = 2;
    tok_cfg.total_steps = 3;
    tok_cfg.codebook_size = 16;
    tok_cfg.checkpoint_every = 3;
    auto tok_ckpt = train_tokenizer(tok_cfg);
    auto before = hash_file(tok_ckpt);

    WMTrainConfig cfg;
    cfg.variant = "i2i";
    cfg.tokenizer_ckpt = tok_ckpt.string();
    cfg.dataset = data_dir.string();
    cfg.out_dir = wm_dir.string();
    cfg.h_c = 3;
    cfg.h_p = 2;
    cfg.batch_size = 4;
    cfg.total_steps = 4;
    cfg.checkpoint_every = 4;
    auto wm_ckpt = train_worldmodel(cfg);
    CHECK(hash_file(tok_ckpt) == before);  // tokenizer untouched

    WMConfig loaded_cfg;
    auto wm = load_worldmodel(wm_ckpt, &loaded_cfg);
    CHECK(loaded_cfg.variant == WMVariant::I2I);
    CHECK(loaded_cfg.codebook_size == 16);

    // Token cache coherence: recomputing tokens gives the cached values.
    auto tokenizer = load_tokenizer(tok_ckpt);
    auto ds = load_dataset(data_dir);
    auto c1 = tokenize_dataset(tokenizer, ds, WMVariant::I2I);
    auto c2 = tokenize_dataset(tokenizer, ds, WMVariant::I2I, /*tokenize_batch=*/3);
    REQUIRE(c1.indices.size() == c2.indices.size());
    for (size_t i = 0; i < c1.indices.size(); ++i)
        CHECK(torch::equal(c1.indices[i], c2.indices[i]));

    for (auto& d : {data_dir, tok_dir, wm_dir}) std::filesystem::remove_all(d);
}
