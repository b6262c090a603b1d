#include "djepa/trainer.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "djepa/datagen.hpp"

namespace djepa {

using nlohmann::json;

double lr_at(int64_t step, int64_t total, double base, double warmup_frac) {
    TORCH_CHECK(step >= 0 && step <= total, "step out of range");
    TORCH_CHECK(warmup_frac >= 0.0 && warmup_frac < 1.0, "warmup_frac out of range");
    auto warmup = static_cast<int64_t>(std::llround(warmup_frac * static_cast<double>(total)));
    if (warmup > 0 && step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
    if (step == warmup) return base;
    double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double momentum_at(int64_t step, int64_t total, double m0, double m1) {
    return m0 + (m1 - m0) * static_cast<double>(step) / static_cast<double>(total);
}

double vq_weight_at(int64_t step, int64_t total, double warmup_frac) {
    auto warmup = static_cast<int64_t>(std::llround(warmup_frac * static_cast<double>(total)));
    if (warmup <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup));
}

TokenizerConfig TrainConfig::tokenizer_config() const {
    TokenizerConfig tc;
    if (backbone == "desk") {
        tc.encoder.width = 192;
        tc.encoder.depth = 4;
        tc.encoder.heads = 4;
        tc.encoder.mlp_ratio = 2.0;
    } else if (backbone == "vit-base") {
        tc.encoder.width = 768;
        tc.encoder.depth = 12;
        tc.encoder.heads = 12;
        tc.encoder.mlp_ratio = 4.0;
    } else {
        throw std::invalid_argument("unknown backbone preset: " + backbone);
    }
    tc.encoder.num_slots = num_slots;
    tc.encoder.slot_dim = slot_dim;
    tc.codebook.num_codes = codebook_size;
    tc.codebook.dim = slot_dim;
    tc.codebook.beta = beta;
    tc.codebook.decay = gamma;
    tc.predictor.width = tc.encoder.width;
    tc.predictor.heads = tc.encoder.heads;
    tc.predictor.mlp_ratio = tc.encoder.mlp_ratio;
    if (preset == "djepa") {
        tc.preset = TokenizerPreset{true, true, true};
    } else if (preset == "ijepa") {
        tc.preset = TokenizerPreset{false, false, false};
    } else {
        throw std::invalid_argument("unknown tokenizer preset: " + preset);
    }
    tc.lambda1 = lambda1;
    tc.lambda2 = lambda2;
    tc.lambda3 = lambda3;
    return tc;
}

std::string TrainConfig::to_json() const {
    json j;
    j["dataset"] = dataset;
    j["out_dir"] = out_dir;
    j["preset"] = preset;
    j["backbone"] = backbone;
    j["num_slots"] = num_slots;
    j["slot_dim"] = slot_dim;
    j["codebook_size"] = codebook_size;
    j["mask_ratio_lo"] = mask_ratio_lo;
    j["mask_ratio_hi"] = mask_ratio_hi;
    j["batch_size"] = batch_size;
    j["total_steps"] = total_steps;
    j["base_lr"] = base_lr;
    j["warmup_frac"] = warmup_frac;
    j["weight_decay"] = weight_decay;
    j["lambda1"] = lambda1;
    j["lambda2"] = lambda2;
    j["lambda3"] = lambda3;
    j["beta"] = beta;
    j["gamma"] = gamma;
    j["vq_warmup_frac"] = vq_warmup_frac;
    j["momentum_start"] = momentum_start;
    j["momentum_end"] = momentum_end;
    j["checkpoint_every"] = checkpoint_every;
    j["reinit_every"] = reinit_every;
    j["reinit_threshold"] = reinit_threshold;
    j["seed"] = seed;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    c.dataset = j.value("dataset", c.dataset);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.preset = j.value("preset", c.preset);
    c.backbone = j.value("backbone", c.backbone);
    c.num_slots = j.value("num_slots", c.num_slots);
    c.slot_dim = j.value("slot_dim", c.slot_dim);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.mask_ratio_lo = j.value("mask_ratio_lo", c.mask_ratio_lo);
    c.mask_ratio_hi = j.value("mask_ratio_hi", c.mask_ratio_hi);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.lambda3 = j.value("lambda3", c.lambda3);
    c.beta = j.value("beta", c.beta);
    c.gamma = j.value("gamma", c.gamma);
    c.vq_warmup_frac = j.value("vq_warmup_frac", c.vq_warmup_frac);
    c.momentum_start = j.value("momentum_start", c.momentum_start);
    c.momentum_end = j.value("momentum_end", c.momentum_end);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.reinit_every = j.value("reinit_every", c.reinit_every);
    c.reinit_threshold = j.value("reinit_threshold", c.reinit_threshold);
    c.seed = j.value("seed", c.seed);
    if (c.total_steps <= 0) throw std::invalid_argument("total_steps must be > 0");
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    return from_json(read_text_file(path));
}

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const std::string& config_json, int64_t step,
                     torch::optim::Optimizer* optimizer, const std::string& rng_state) {
    torch::serialize::OutputArchive archive;
    archive.write("config", config_json);
    archive.write("step", step);
    archive.write("rng_state", rng_state);
    archive.write("torch_rng", at::detail::getDefaultCPUGenerator().get_state());
    for (const auto& item : module.named_parameters())
        archive.write("param/" + item.key(), item.value());
    for (const auto& item : module.named_buffers())
        archive.write("buffer/" + item.key(), item.value());
    if (optimizer) {
        torch::serialize::OutputArchive opt;
        optimizer->save(opt);
        archive.write("optimizer", opt);
    }
    // Fixed temp name: the zip container embeds the file stem, and checkpoint
    // bytes must not depend on the final filename.
    auto tmp = path.parent_path() / "ckpt.tmp";
    archive.save_to(tmp.string());
    std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    CheckpointMeta meta;
    c10::IValue config, step, rng;
    archive.read("config", config);
    archive.read("step", step);
    archive.read("rng_state", rng);
    meta.config_json = config.toStringRef();
    meta.step = step.toInt();
    meta.rng_state = rng.toStringRef();
    return meta;
}

void load_checkpoint_into(const std::filesystem::path& path, torch::nn::Module& module,
                          torch::optim::Optimizer* optimizer) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::NoGradGuard guard;
    for (const auto& item : module.named_parameters()) {
        torch::Tensor t;
        archive.read("param/" + item.key(), t);
        TORCH_CHECK(t.sizes() == item.value().sizes(), "checkpoint shape mismatch for ", item.key());
        item.value().copy_(t);
    }
    for (const auto& item : module.named_buffers()) {
        torch::Tensor t;
        archive.read("buffer/" + item.key(), t, /*is_buffer=*/true);
        item.value().copy_(t.to(item.value().dtype()));
    }
    if (optimizer) {
        torch::serialize::InputArchive opt;
        archive.read("optimizer", opt);
        optimizer->load(opt);
    }
    torch::Tensor torch_rng;
    archive.read("torch_rng", torch_rng, /*is_buffer=*/true);
    auto gen = at::detail::getDefaultCPUGenerator();
    gen.set_state(torch_rng);
}

TokenizerModel load_tokenizer(const std::filesystem::path& path, TrainConfig* out_config) {
    auto meta = read_checkpoint_meta(path);
    auto cfg = TrainConfig::from_json(meta.config_json);
    TokenizerModel model(cfg.tokenizer_config());
    load_checkpoint_into(path, *model);
    if (out_config) *out_config = cfg;
    return model;
}

namespace {

std::string rng_to_string(Rng& rng) {
    std::ostringstream oss;
    oss << rng.engine();
    return oss.str();
}

void rng_from_string(Rng& rng, const std::string& s) {
    std::istringstream iss(s);
    iss >> rng.engine();
}

}  // namespace

std::filesystem::path train_tokenizer(const TrainConfig& cfg, const std::filesystem::path& resume,
                                      int64_t stop_after) {
    auto ds = load_dataset(cfg.dataset);
    std::vector<const Image*> all_frames;
    for (const auto& seq : ds.sequences)
        for (const auto& f : seq.frames) all_frames.push_back(&f);
    TORCH_CHECK(!all_frames.empty(), "dataset has no frames");

    std::filesystem::create_directories(cfg.out_dir);
    auto config_json = cfg.to_json();
    write_text_file_atomic(std::filesystem::path(cfg.out_dir) / "config.json", config_json + "\n");

    torch::manual_seed(cfg.seed);
    Rng rng(cfg.seed ^ 0x7261696e65727ull);
    TokenizerModel model(cfg.tokenizer_config());
    auto n_patches = model->cfg_.encoder.n_patches();

    torch::optim::AdamW optimizer(model->trainable_parameters(),
                                  torch::optim::AdamWOptions(cfg.base_lr).weight_decay(cfg.weight_decay));

    int64_t start_step = 0;
    if (!resume.empty()) {
        auto meta = read_checkpoint_meta(resume);
        load_checkpoint_into(resume, *model, &optimizer);
        rng_from_string(rng, meta.rng_state);
        start_step = meta.step;
    }

    auto out_dir = std::filesystem::path(cfg.out_dir);
    CsvWriter metrics(out_dir / "metrics.csv",
                      {"step", "l_s2p", "l_p2s", "l_p2p", "l_vq", "total", "perplexity", "lr", "momentum"});
    auto latest_ckpt = out_dir / "checkpoint.pt";
    auto final_ckpt = out_dir / "checkpoint_final.pt";

    for (int64_t step = start_step + 1; step <= cfg.total_steps; ++step) {
        std::vector<const Image*> batch;
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(all_frames[rng.uniform_int(0, static_cast<int>(all_frames.size()) - 1)]);
        auto frames = frames_to_tensor(batch, ds.channel_mean, ds.channel_std);
        auto mask = sample_mask(n_patches, cfg.mask_ratio_lo, cfg.mask_ratio_hi, rng);

        if (model->codebook && !model->codebook->initialized()) {
            torch::NoGradGuard guard;
            auto bundle = model->target_enc->encode_full(frames);
            model->codebook->init_from(bundle.z_s.reshape({-1, cfg.slot_dim}), rng);
        }

        double lr = lr_at(step, cfg.total_steps, cfg.base_lr, cfg.warmup_frac);
        for (auto& group : optimizer.param_groups())
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

        double vq_w = vq_weight_at(step, cfg.total_steps, cfg.vq_warmup_frac);
        auto fwd = model->forward_losses(frames, mask, vq_w);
        if (!std::isfinite(fwd.losses.total)) {
            json diag;
            diag["step"] = step;
            diag["l_s2p"] = fwd.losses.l_s2p;
            diag["l_p2s"] = fwd.losses.l_p2s;
            diag["l_p2p"] = fwd.losses.l_p2p;
            diag["l_vq"] = fwd.losses.l_vq;
            write_text_file_atomic(out_dir / "nan_diagnostic.json", diag.dump(2) + "\n");
            throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                     "; last-good checkpoint: " + latest_ckpt.string());
        }

        optimizer.zero_grad();
        fwd.total.backward();
        optimizer.step();

        double momentum = momentum_at(step, cfg.total_steps, cfg.momentum_start, cfg.momentum_end);
        model->update_target(momentum);

        double perplexity = 0.0;
        if (model->codebook) {
            model->codebook->ema_update(fwd.target_semantic, fwd.target_indices);
            perplexity = codebook_stats(fwd.target_indices, cfg.codebook_size).perplexity;
            if (cfg.reinit_every > 0 && step % cfg.reinit_every == 0)
                model->codebook->reinit_dead(fwd.target_semantic, cfg.reinit_threshold, rng);
        }

        metrics.append({std::to_string(step), std::to_string(fwd.losses.l_s2p),
                        std::to_string(fwd.losses.l_p2s), std::to_string(fwd.losses.l_p2p),
                        std::to_string(fwd.losses.l_vq), std::to_string(fwd.losses.total),
                        std::to_string(perplexity), std::to_string(lr), std::to_string(momentum)});

        if (step % cfg.checkpoint_every == 0 || step == cfg.total_steps || step == stop_after)
            save_checkpoint(latest_ckpt, *model, config_json, step, &optimizer, rng_to_string(rng));
        if (step == stop_after) return latest_ckpt;
    }

    save_checkpoint(final_ckpt, *model, config_json, cfg.total_steps, &optimizer, rng_to_string(rng));
    return final_ckpt;
}

std::filesystem::path train_ijepa_baseline(TrainConfig cfg) {
    cfg.preset = "ijepa";
    return train_tokenizer(cfg);
}

}  // namespace djepa
