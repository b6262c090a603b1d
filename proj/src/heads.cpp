#include "djepa/heads.hpp"

#include <algorithm>

#include <json.hpp>

#include "djepa/datagen.hpp"

namespace djepa {

using nlohmann::json;

ProbeHeadImpl::ProbeHeadImpl(int in_dim, int n_classes) {
    linear = register_module("linear", torch::nn::Linear(in_dim, n_classes));
}

torch::Tensor ProbeHeadImpl::forward(const torch::Tensor& pooled) {
    return linear->forward(pooled);
}

namespace {

// One LARS step: scale each parameter's update by ||w|| / ||g + wd*w||.
void lars_step(std::vector<torch::Tensor>& params, std::vector<torch::Tensor>& momentum_buf,
               double lr, double wd, double momentum, bool layer_adaptive) {
    torch::NoGradGuard guard;
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.grad().defined()) continue;
        auto d = p.grad() + wd * p;
        if (layer_adaptive) {
            double wnorm = p.norm().item<double>();
            double dnorm = d.norm().item<double>();
            if (wnorm > 0 && dnorm > 0) d = d * (wnorm / (dnorm + 1e-9));
        }
        momentum_buf[i].mul_(momentum).add_(d);
        p.add_(momentum_buf[i], -lr);
    }
}

}  // namespace

ProbeHead train_prober(const torch::Tensor& tokens, const torch::Tensor& labels, int n_classes,
                       const ProbeTrainConfig& cfg) {
    TORCH_CHECK(tokens.dim() == 2, "tokens must be N x D");
    TORCH_CHECK(labels.dim() == 1 && labels.size(0) == tokens.size(0),
                "label/token count mismatch");
    torch::manual_seed(cfg.seed);
    Rng rng(cfg.seed ^ 0x70726f6265ull);
    ProbeHead head(static_cast<int>(tokens.size(1)), n_classes);
    std::vector<torch::Tensor> params;
    std::vector<torch::Tensor> momentum_buf;
    for (auto& p : head->parameters()) {
        params.push_back(p);
        momentum_buf.push_back(torch::zeros_like(p));
    }
    bool layer_adaptive = cfg.optimizer == "lars";
    int64_t n = tokens.size(0);
    for (int64_t step = 1; step <= cfg.total_steps; ++step) {
        auto idx = torch::empty({cfg.batch_size}, torch::kInt64);
        auto* idx_p = idx.data_ptr<int64_t>();
        for (int b = 0; b < cfg.batch_size; ++b) idx_p[b] = rng.uniform_int(0, static_cast<int>(n) - 1);
        auto x = tokens.index_select(0, idx);
        auto y = labels.index_select(0, idx);
        auto loss = torch::nn::functional::cross_entropy(head->forward(x), y);
        for (auto& p : params)
            if (p.grad().defined()) p.mutable_grad().zero_();
        loss.backward();
        double lr = lr_at(step, cfg.total_steps, cfg.base_lr, cfg.warmup_frac);
        lars_step(params, momentum_buf, lr, cfg.weight_decay, cfg.momentum, layer_adaptive);
    }
    return head;
}

torch::Tensor probe_predict(ProbeHead& head, const torch::Tensor& pooled) {
    torch::NoGradGuard guard;
    return head->forward(pooled).argmax(-1);
}

double probe_accuracy(ProbeHead& head, const torch::Tensor& tokens, const torch::Tensor& labels) {
    auto pred = probe_predict(head, tokens);
    return pred.eq(labels).to(torch::kDouble).mean().item<double>();
}

Image reset_to_white(const Image& frame) {
    TORCH_CHECK(frame.size() == static_cast<size_t>(kImageSize) * kImageSize * kImageChannels,
                "unexpected frame size");
    Image out = frame;
    const auto& centers = ball_centers();
    for (const auto& c : centers) {
        int cx = c[0], cy = c[1];
        for (int y = cy - kBallRadius; y <= cy + kBallRadius; ++y) {
            for (int x = cx - kBallRadius; x <= cx + kBallRadius; ++x) {
                double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= double(kBallRadius) * kBallRadius) {
                    size_t off = (static_cast<size_t>(y) * kImageSize + x) * kImageChannels;
                    out[off] = out[off + 1] = out[off + 2] = 255;
                }
            }
        }
    }
    return out;
}

std::string DecoderConfig::to_json() const {
    json j;
    j["width"] = width;
    j["depth"] = depth;
    j["heads"] = heads;
    j["mlp_ratio"] = mlp_ratio;
    j["patch_size"] = patch_size;
    j["token_dim"] = token_dim;
    j["n_classes"] = n_classes;
    return j.dump(2);
}

DecoderConfig DecoderConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    DecoderConfig c;
    c.width = j.at("width").get<int>();
    c.depth = j.at("depth").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.patch_size = j.at("patch_size").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    return c;
}

PixelDecoderImpl::PixelDecoderImpl(const DecoderConfig& cfg) : cfg_(cfg) {
    int n_patches = (kImageSize / cfg.patch_size) * (kImageSize / cfg.patch_size);
    int patch_dim = kImageChannels * cfg.patch_size * cfg.patch_size;
    query_embed = register_module("query_embed", torch::nn::Linear(patch_dim, cfg.width));
    mem_proj = register_module("mem_proj", torch::nn::Linear(cfg.token_dim, cfg.width));
    out_proj = register_module("out_proj",
                               torch::nn::Linear(cfg.width, cfg.patch_size * cfg.patch_size * cfg.n_classes));
    pos_emb = register_parameter("pos_emb", torch::randn({n_patches, cfg.width}) * 0.02);
    for (int i = 0; i < cfg.depth; ++i)
        blocks.push_back(register_module("block" + std::to_string(i),
                                         CrossBlock(cfg.width, cfg.heads, cfg.mlp_ratio)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
}

torch::Tensor PixelDecoderImpl::forward(const torch::Tensor& white_frames, const torch::Tensor& tokens) {
    TORCH_CHECK(tokens.dim() == 3 && tokens.size(2) == cfg_.token_dim, "tokens must be B x T x D");
    auto B = white_frames.size(0);
    auto q = query_embed->forward(patchify(white_frames, cfg_.patch_size)) + pos_emb.unsqueeze(0);
    auto memory = mem_proj->forward(tokens);
    for (auto& block : blocks) q = block->forward(q, memory);
    q = norm->forward(q);
    auto logits = out_proj->forward(q);  // B x N_p x (p*p*classes)
    int p = cfg_.patch_size;
    int64_t g = kImageSize / p;
    // B, gh, gw, p, p, classes -> B, classes, H, W
    logits = logits.reshape({B, g, g, p, p, cfg_.n_classes})
                 .permute({0, 5, 1, 3, 2, 4})
                 .reshape({B, cfg_.n_classes, kImageSize, kImageSize});
    return logits;
}

torch::Tensor decode_pixels(PixelDecoder& decoder, const torch::Tensor& tokens,
                            const torch::Tensor& white_frames) {
    torch::NoGradGuard guard;
    return decoder->forward(white_frames, tokens).argmax(1).to(torch::kUInt8);
}

std::string DecoderTrainConfig::to_json() const {
    json j;
    j["tokenizer_ckpt"] = tokenizer_ckpt;
    j["dataset"] = dataset;
    j["out_dir"] = out_dir;
    j["token_source"] = token_source;
    j["width"] = width;
    j["depth"] = depth;
    j["heads"] = heads;
    j["mlp_ratio"] = mlp_ratio;
    j["batch_size"] = batch_size;
    j["total_steps"] = total_steps;
    j["base_lr"] = base_lr;
    j["warmup_frac"] = warmup_frac;
    j["weight_decay"] = weight_decay;
    j["checkpoint_every"] = checkpoint_every;
    j["seed"] = seed;
    return j.dump(2);
}

DecoderTrainConfig DecoderTrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    DecoderTrainConfig c;
    c.tokenizer_ckpt = j.value("tokenizer_ckpt", c.tokenizer_ckpt);
    c.dataset = j.value("dataset", c.dataset);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.token_source = j.value("token_source", c.token_source);
    c.width = j.value("width", c.width);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
    return c;
}

DecoderTrainConfig DecoderTrainConfig::load(const std::filesystem::path& path) {
    return from_json(read_text_file(path));
}

std::filesystem::path train_decoder(const DecoderTrainConfig& cfg) {
    TrainConfig tok_cfg;
    auto tokenizer = load_tokenizer(cfg.tokenizer_ckpt, &tok_cfg);
    auto ds = load_dataset(cfg.dataset);
    TORCH_CHECK(ds.task == Task::Balls, "the pixel decoder is a Blinking-Ball head");

    bool semantic = cfg.token_source == "semantic";
    TORCH_CHECK(semantic || cfg.token_source == "patch", "token_source must be semantic|patch");
    TORCH_CHECK(!semantic || tokenizer->codebook, "semantic token source needs a codebook");

    DecoderConfig dec_cfg;
    dec_cfg.width = cfg.width;
    dec_cfg.depth = cfg.depth;
    dec_cfg.heads = cfg.heads;
    dec_cfg.mlp_ratio = cfg.mlp_ratio;
    dec_cfg.patch_size = tokenizer->cfg_.encoder.patch_size;
    dec_cfg.token_dim = semantic ? tokenizer->cfg_.encoder.slot_dim : tokenizer->cfg_.encoder.width;

    std::filesystem::create_directories(cfg.out_dir);
    auto out_dir = std::filesystem::path(cfg.out_dir);
    json combined;
    combined["decoder"] = json::parse(dec_cfg.to_json());
    combined["train"] = json::parse(cfg.to_json());
    auto config_json = combined.dump(2);
    write_text_file_atomic(out_dir / "config.json", config_json + "\n");

    torch::manual_seed(cfg.seed);
    Rng rng(cfg.seed ^ 0x6465636f646572ull);
    PixelDecoder decoder(dec_cfg);

    // Lit-ball pixels are <1% of each frame per color class, so unweighted CE
    // settles into predicting every ball white. Balance the loss by inverse
    // class frequency measured over the training sequences' label maps.
    auto class_counts = torch::zeros({dec_cfg.n_classes}, torch::kDouble);
    {
        auto* counts = class_counts.data_ptr<double>();
        for (const auto& seq : ds.sequences) {
            int span = std::min(seq.length(), 20);
            for (int t = 0; t < span; ++t)
                for (uint8_t c : ball_class_map(*seq.ball_spec, t)) counts[c] += 1.0;
        }
    }
    auto class_weights =
        (class_counts.sum() / (dec_cfg.n_classes * class_counts.clamp_min(1.0))).to(torch::kFloat);
    torch::optim::AdamW optimizer(decoder->parameters(),
                                  torch::optim::AdamWOptions(cfg.base_lr).weight_decay(cfg.weight_decay));
    CsvWriter metrics(out_dir / "metrics.csv", {"step", "loss", "lr"});

    // The all-white query frame is shared by every Blinking-Ball sequence.
    auto white = reset_to_white(ds.sequences.front().frames.front());
    std::vector<const Image*> white_batch(cfg.batch_size, &white);
    auto white_frames = frames_to_tensor(white_batch, ds.channel_mean, ds.channel_std);

    int n_seq = static_cast<int>(ds.sequences.size());
    for (int64_t step = 1; step <= cfg.total_steps; ++step) {
        std::vector<const Image*> frames;
        auto target = torch::empty({cfg.batch_size, kImageSize, kImageSize}, torch::kInt64);
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& seq = ds.sequences[rng.uniform_int(0, n_seq - 1)];
            int t = rng.uniform_int(0, seq.length() - 1);
            frames.push_back(&seq.frames[t]);
            auto classes = ball_class_map(*seq.ball_spec, t);
            target[b] = torch::from_blob(classes.data(), {kImageSize, kImageSize}, torch::kUInt8)
                            .to(torch::kInt64);
        }
        auto x = frames_to_tensor(frames, ds.channel_mean, ds.channel_std);
        torch::Tensor tokens;
        {
            auto tok = tokenizer->tokenize(x);
            tokens = semantic ? tok.quantized : tok.patch_tokens;
        }

        double lr = lr_at(step, cfg.total_steps, cfg.base_lr, cfg.warmup_frac);
        for (auto& group : optimizer.param_groups())
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

        auto logits = decoder->forward(white_frames, tokens);
        auto loss = torch::nn::functional::cross_entropy(
            logits, target, torch::nn::functional::CrossEntropyFuncOptions().weight(class_weights));
        TORCH_CHECK(std::isfinite(loss.item<double>()), "non-finite decoder loss at step ", step);

        optimizer.zero_grad();
        loss.backward();
        optimizer.step();
        metrics.append({std::to_string(step), std::to_string(loss.item<double>()), std::to_string(lr)});

        if (step % cfg.checkpoint_every == 0)
            save_checkpoint(out_dir / "checkpoint.pt", *decoder, config_json, step);
    }
    auto final_ckpt = out_dir / "checkpoint_final.pt";
    save_checkpoint(final_ckpt, *decoder, config_json, cfg.total_steps);
    return final_ckpt;
}

PixelDecoder load_decoder(const std::filesystem::path& path, DecoderConfig* out_cfg) {
    auto meta = read_checkpoint_meta(path);
    auto combined = json::parse(meta.config_json);
    auto dec_cfg = DecoderConfig::from_json(combined.at("decoder").dump());
    PixelDecoder decoder(dec_cfg);
    load_checkpoint_into(path, *decoder);
    if (out_cfg) *out_cfg = dec_cfg;
    return decoder;
}

}  // namespace djepa
