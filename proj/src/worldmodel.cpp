#include "djepa/worldmodel.hpp"

#include <json.hpp>

#include "djepa/datagen.hpp"

namespace djepa {

using nlohmann::json;

std::string to_string(WMVariant v) {
    switch (v) {
        case WMVariant::I2I: return "i2i";
        case WMVariant::R2I: return "r2i";
        case WMVariant::R2R_Concat: return "r2r-concat";
        case WMVariant::R2R_AvgPool: return "r2r-avgpool";
    }
    throw std::logic_error("bad WMVariant");
}

WMVariant wm_variant_from_string(const std::string& s) {
    if (s == "i2i") return WMVariant::I2I;
    if (s == "r2i") return WMVariant::R2I;
    if (s == "r2r-concat") return WMVariant::R2R_Concat;
    if (s == "r2r-avgpool") return WMVariant::R2R_AvgPool;
    throw std::invalid_argument("unknown world-model variant: " + s);
}

std::string WMConfig::to_json() const {
    json j;
    j["variant"] = to_string(variant);
    j["width"] = width;
    j["depth"] = depth;
    j["heads"] = heads;
    j["mlp_ratio"] = mlp_ratio;
    j["tokens_per_frame"] = tokens_per_frame;
    j["token_dim"] = token_dim;
    j["codebook_size"] = codebook_size;
    j["h_c"] = h_c;
    j["h_p"] = h_p;
    return j.dump(2);
}

WMConfig WMConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    WMConfig c;
    c.variant = wm_variant_from_string(j.at("variant").get<std::string>());
    c.width = j.at("width").get<int>();
    c.depth = j.at("depth").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.tokens_per_frame = j.at("tokens_per_frame").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    c.codebook_size = j.at("codebook_size").get<int>();
    c.h_c = j.at("h_c").get<int>();
    c.h_p = j.at("h_p").get<int>();
    return c;
}

WorldModelImpl::WorldModelImpl(const WMConfig& cfg) : cfg_(cfg) {
    if (cfg.variant == WMVariant::I2I)
        index_embed = register_module("index_embed",
                                      torch::nn::Embedding(cfg.codebook_size, cfg.width));
    else
        vec_embed = register_module("vec_embed", torch::nn::Linear(cfg.token_dim, cfg.width));
    time_emb = register_parameter("time_emb", torch::randn({cfg.h_c + cfg.h_p, cfg.width}) * 0.02);
    slot_emb = register_parameter("slot_emb", torch::randn({cfg.tokens_per_frame, cfg.width}) * 0.02);
    query_token = register_parameter("query_token", torch::randn({cfg.width}) * 0.02);
    for (int i = 0; i < cfg.depth; ++i)
        blocks.push_back(register_module("block" + std::to_string(i),
                                         TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
    int out_dim = cfg.discrete() ? cfg.codebook_size : cfg.token_dim;
    head = register_module("head", torch::nn::Linear(cfg.width, out_dim));
}

torch::Tensor WorldModelImpl::embed_window(const torch::Tensor& window) {
    const int T = cfg_.tokens_per_frame;
    torch::Tensor x;
    if (cfg_.variant == WMVariant::I2I) {
        TORCH_CHECK(window.dim() == 3 && window.size(1) == cfg_.h_c && window.size(2) == T,
                    "I2I window must be B x H_c x L indices");
        TORCH_CHECK((window >= 0).all().item<bool>() &&
                        (window < cfg_.codebook_size).all().item<bool>(),
                    "index out of range");
        x = index_embed->forward(window);
    } else {
        TORCH_CHECK(window.dim() == 4 && window.size(1) == cfg_.h_c && window.size(2) == T &&
                        window.size(3) == cfg_.token_dim,
                    "window must be B x H_c x T x D vectors");
        x = vec_embed->forward(window);
    }
    x = x + time_emb.slice(0, 0, cfg_.h_c).unsqueeze(1).unsqueeze(0) + slot_emb.unsqueeze(0).unsqueeze(0);
    return x.reshape({x.size(0), static_cast<int64_t>(cfg_.h_c) * T, cfg_.width});
}

torch::Tensor WorldModelImpl::forward(const torch::Tensor& window) {
    const int T = cfg_.tokens_per_frame;
    auto x = embed_window(window);
    auto B = x.size(0);
    auto q = query_token.reshape({1, 1, 1, cfg_.width}) +
             time_emb.slice(0, cfg_.h_c).unsqueeze(1).unsqueeze(0) + slot_emb.unsqueeze(0).unsqueeze(0);
    auto queries = q.expand({B, cfg_.h_p, T, cfg_.width})
                       .reshape({B, static_cast<int64_t>(cfg_.h_p) * T, cfg_.width});
    auto seq = torch::cat({x, queries}, 1);
    for (auto& block : blocks) seq = block->forward(seq);
    seq = norm->forward(seq);
    auto out = head->forward(seq.slice(1, seq.size(1) - cfg_.h_p * T));
    if (cfg_.discrete())
        return out.reshape({B, cfg_.h_p, T, cfg_.codebook_size});
    return out.reshape({B, cfg_.h_p, T, cfg_.token_dim});
}

RolloutTrace rollout(WorldModel& model, const torch::Tensor& conditioning, int total_steps,
                     const std::optional<torch::Tensor>& codebook_rows) {
    const auto& cfg = model->cfg_;
    TORCH_CHECK(total_steps >= cfg.h_p, "total_steps must be >= H_p");
    TORCH_CHECK(cfg.variant != WMVariant::R2I || codebook_rows.has_value(),
                "R2I rollout needs codebook rows for feedback");
    torch::NoGradGuard guard;
    RolloutTrace trace;
    trace.variant = cfg.variant;
    trace.h_c = cfg.h_c;
    trace.h_p = cfg.h_p;

    auto window = conditioning;                       // embedding-space input (indices or vectors)
    std::vector<torch::Tensor> idx_chunks, vec_chunks;
    int produced = 0;
    while (produced < total_steps) {
        auto out = model->forward(window);
        torch::Tensor feedback;
        if (cfg.discrete()) {
            auto idx = out.argmax(-1);  // B x H_p x L
            idx_chunks.push_back(idx);
            if (cfg.variant == WMVariant::I2I) {
                feedback = idx;
            } else {
                auto flat = codebook_rows->index_select(0, idx.reshape({-1}));
                feedback = flat.reshape({idx.size(0), cfg.h_p, cfg.tokens_per_frame, cfg.token_dim});
                vec_chunks.push_back(feedback);
            }
        } else {
            vec_chunks.push_back(out);
            feedback = out;
        }
        window = torch::cat({window, feedback}, 1).slice(1, feedback.size(1) + window.size(1) - cfg.h_c);
        produced += cfg.h_p;
    }
    if (!idx_chunks.empty()) trace.indices = torch::cat(idx_chunks, 1).slice(1, 0, total_steps);
    if (!vec_chunks.empty()) trace.vectors = torch::cat(vec_chunks, 1).slice(1, 0, total_steps);
    return trace;
}

void save_trace(const RolloutTrace& trace, const std::filesystem::path& path) {
    torch::serialize::OutputArchive archive;
    archive.write("variant", to_string(trace.variant));
    archive.write("h_c", static_cast<int64_t>(trace.h_c));
    archive.write("h_p", static_cast<int64_t>(trace.h_p));
    archive.write("has_indices", trace.indices.defined());
    archive.write("has_vectors", trace.vectors.defined());
    if (trace.indices.defined()) archive.write("indices", trace.indices);
    if (trace.vectors.defined()) archive.write("vectors", trace.vectors);
    auto tmp = path;
    tmp += ".tmp";
    archive.save_to(tmp.string());
    std::filesystem::rename(tmp, path);
}

RolloutTrace load_trace(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    RolloutTrace trace;
    c10::IValue variant, h_c, h_p, has_idx, has_vec;
    archive.read("variant", variant);
    archive.read("h_c", h_c);
    archive.read("h_p", h_p);
    archive.read("has_indices", has_idx);
    archive.read("has_vectors", has_vec);
    trace.variant = wm_variant_from_string(variant.toStringRef());
    trace.h_c = static_cast<int>(h_c.toInt());
    trace.h_p = static_cast<int>(h_p.toInt());
    if (has_idx.toBool()) archive.read("indices", trace.indices);
    if (has_vec.toBool()) archive.read("vectors", trace.vectors);
    return trace;
}

std::string WMTrainConfig::to_json() const {
    json j;
    j["variant"] = variant;
    j["tokenizer_ckpt"] = tokenizer_ckpt;
    j["dataset"] = dataset;
    j["out_dir"] = out_dir;
    j["width"] = width;
    j["depth"] = depth;
    j["heads"] = heads;
    j["mlp_ratio"] = mlp_ratio;
    j["h_c"] = h_c;
    j["h_p"] = h_p;
    j["batch_size"] = batch_size;
    j["total_steps"] = total_steps;
    j["base_lr"] = base_lr;
    j["warmup_frac"] = warmup_frac;
    j["weight_decay"] = weight_decay;
    j["checkpoint_every"] = checkpoint_every;
    j["seed"] = seed;
    return j.dump(2);
}

WMTrainConfig WMTrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    WMTrainConfig c;
    c.variant = j.value("variant", c.variant);
    c.tokenizer_ckpt = j.value("tokenizer_ckpt", c.tokenizer_ckpt);
    c.dataset = j.value("dataset", c.dataset);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.width = j.value("width", c.width);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.h_c = j.value("h_c", c.h_c);
    c.h_p = j.value("h_p", c.h_p);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
    return c;
}

WMTrainConfig WMTrainConfig::load(const std::filesystem::path& path) {
    return from_json(read_text_file(path));
}

TokenCache tokenize_dataset(TokenizerModel& tokenizer, const Dataset& ds, WMVariant variant,
                            int tokenize_batch) {
    torch::NoGradGuard guard;
    TokenCache cache;
    cache.variant = variant;
    bool needs_codebook = (variant == WMVariant::I2I || variant == WMVariant::R2I);
    TORCH_CHECK(!needs_codebook || tokenizer->codebook,
                "discrete world model needs a tokenizer with a codebook");
    for (const auto& seq : ds.sequences) {
        std::vector<torch::Tensor> idx_parts, vec_parts;
        for (int lo = 0; lo < seq.length(); lo += tokenize_batch) {
            int hi = std::min(seq.length(), lo + tokenize_batch);
            std::vector<const Image*> frames;
            for (int t = lo; t < hi; ++t) frames.push_back(&seq.frames[t]);
            auto x = frames_to_tensor(frames, ds.channel_mean, ds.channel_std);
            auto tok = tokenizer->tokenize(x);
            switch (variant) {
                case WMVariant::I2I:
                    idx_parts.push_back(tok.indices);
                    break;
                case WMVariant::R2I:
                    idx_parts.push_back(tok.indices);
                    vec_parts.push_back(tok.quantized);
                    break;
                case WMVariant::R2R_Concat:
                    vec_parts.push_back(tok.patch_tokens);
                    break;
                case WMVariant::R2R_AvgPool:
                    vec_parts.push_back(tok.patch_tokens.mean(1, /*keepdim=*/true));
                    break;
            }
        }
        if (!idx_parts.empty()) cache.indices.push_back(torch::cat(idx_parts, 0));
        if (!vec_parts.empty()) cache.vectors.push_back(torch::cat(vec_parts, 0));
    }
    return cache;
}

std::filesystem::path train_worldmodel(const WMTrainConfig& cfg) {
    auto variant = wm_variant_from_string(cfg.variant);
    TrainConfig tok_cfg;
    auto tokenizer = load_tokenizer(cfg.tokenizer_ckpt, &tok_cfg);
    auto enc = tokenizer->cfg_.encoder;
    auto ds = load_dataset(cfg.dataset);
    TORCH_CHECK(ds.length >= cfg.h_c + cfg.h_p, "sequences shorter than H_c + H_p");

    WMConfig wm_cfg;
    wm_cfg.variant = variant;
    wm_cfg.width = cfg.width;
    wm_cfg.depth = cfg.depth;
    wm_cfg.heads = cfg.heads;
    wm_cfg.mlp_ratio = cfg.mlp_ratio;
    wm_cfg.h_c = cfg.h_c;
    wm_cfg.h_p = cfg.h_p;
    wm_cfg.codebook_size = tok_cfg.codebook_size;
    switch (variant) {
        case WMVariant::I2I:
        case WMVariant::R2I:
            wm_cfg.tokens_per_frame = enc.num_slots;
            wm_cfg.token_dim = enc.slot_dim;
            break;
        case WMVariant::R2R_Concat:
            wm_cfg.tokens_per_frame = enc.n_patches();
            wm_cfg.token_dim = enc.width;
            break;
        case WMVariant::R2R_AvgPool:
            wm_cfg.tokens_per_frame = 1;
            wm_cfg.token_dim = enc.width;
            break;
    }

    auto cache = tokenize_dataset(tokenizer, ds, variant);

    std::filesystem::create_directories(cfg.out_dir);
    auto out_dir = std::filesystem::path(cfg.out_dir);
    json combined;
    combined["wm"] = json::parse(wm_cfg.to_json());
    combined["train"] = json::parse(cfg.to_json());
    auto config_json = combined.dump(2);
    write_text_file_atomic(out_dir / "config.json", config_json + "\n");

    torch::manual_seed(cfg.seed);
    Rng rng(cfg.seed ^ 0x776d5ull);
    WorldModel model(wm_cfg);
    torch::optim::AdamW optimizer(model->parameters(),
                                  torch::optim::AdamWOptions(cfg.base_lr).weight_decay(cfg.weight_decay));
    CsvWriter metrics(out_dir / "metrics.csv", {"step", "loss", "lr"});

    int n_seq = static_cast<int>(ds.sequences.size());
    int max_start = ds.length - (cfg.h_c + cfg.h_p);
    bool use_indices_input = (variant == WMVariant::I2I);

    for (int64_t step = 1; step <= cfg.total_steps; ++step) {
        std::vector<torch::Tensor> windows, targets;
        for (int b = 0; b < cfg.batch_size; ++b) {
            int s = rng.uniform_int(0, n_seq - 1);
            int t0 = rng.uniform_int(0, max_start);
            if (use_indices_input)
                windows.push_back(cache.indices[s].slice(0, t0, t0 + cfg.h_c));
            else
                windows.push_back(cache.vectors[s].slice(0, t0, t0 + cfg.h_c));
            if (wm_cfg.discrete())
                targets.push_back(cache.indices[s].slice(0, t0 + cfg.h_c, t0 + cfg.h_c + cfg.h_p));
            else
                targets.push_back(cache.vectors[s].slice(0, t0 + cfg.h_c, t0 + cfg.h_c + cfg.h_p));
        }
        auto window = torch::stack(windows, 0);
        auto target = torch::stack(targets, 0);

        double lr = lr_at(step, cfg.total_steps, cfg.base_lr, cfg.warmup_frac);
        for (auto& group : optimizer.param_groups())
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

        auto out = model->forward(window);
        torch::Tensor loss;
        if (wm_cfg.discrete())
            loss = torch::nn::functional::cross_entropy(
                out.reshape({-1, wm_cfg.codebook_size}), target.reshape({-1}));
        else
            loss = (out - target).pow(2).mean();
        TORCH_CHECK(std::isfinite(loss.item<double>()), "non-finite world-model loss at step ", step);

        optimizer.zero_grad();
        loss.backward();
        optimizer.step();
        metrics.append({std::to_string(step), std::to_string(loss.item<double>()), std::to_string(lr)});

        if (step % cfg.checkpoint_every == 0)
            save_checkpoint(out_dir / "checkpoint.pt", *model, config_json, step);
    }
    auto final_ckpt = out_dir / "checkpoint_final.pt";
    save_checkpoint(final_ckpt, *model, config_json, cfg.total_steps);
    return final_ckpt;
}

WorldModel load_worldmodel(const std::filesystem::path& path, WMConfig* out_cfg) {
    auto meta = read_checkpoint_meta(path);
    auto combined = json::parse(meta.config_json);
    auto wm_cfg = WMConfig::from_json(combined.at("wm").dump());
    WorldModel model(wm_cfg);
    load_checkpoint_into(path, *model);
    if (out_cfg) *out_cfg = wm_cfg;
    return model;
}

}  // namespace djepa
