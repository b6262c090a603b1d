#include "djepa/objectives.hpp"

#include <set>

namespace djepa {

PatchPredictorImpl::PatchPredictorImpl(const PredictorConfig& cfg, int in_dim, int out_dim,
                                       int n_positions)
    : cfg_(cfg), n_positions_(n_positions) {
    in_proj = register_module("in_proj", torch::nn::Linear(in_dim, cfg.width));
    out_proj = register_module("out_proj", torch::nn::Linear(cfg.width, out_dim));
    mask_token = register_parameter("mask_token", torch::randn({cfg.width}) * 0.02);
    pos_emb = register_parameter("pos_emb", torch::randn({n_positions, cfg.width}) * 0.02);
    for (int i = 0; i < cfg.depth; ++i)
        blocks.push_back(register_module("block" + std::to_string(i),
                                         TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
}

torch::Tensor PatchPredictorImpl::forward(const torch::Tensor& tokens,
                                          const std::optional<torch::Tensor>& token_positions,
                                          const torch::Tensor& target_positions) {
    TORCH_CHECK(target_positions.numel() > 0, "predictor needs a nonempty target set");
    auto B = tokens.size(0);
    auto x = in_proj->forward(tokens);
    if (token_positions) {
        TORCH_CHECK(token_positions->size(0) == tokens.size(1), "token position count mismatch");
        std::set<int64_t> vis;
        for (int64_t i = 0; i < token_positions->size(0); ++i)
            vis.insert(token_positions->index({i}).item<int64_t>());
        for (int64_t i = 0; i < target_positions.size(0); ++i)
            TORCH_CHECK(!vis.count(target_positions.index({i}).item<int64_t>()),
                        "target positions overlap visible positions");
        x = x + pos_emb.index_select(0, *token_positions).unsqueeze(0);
    }
    auto m = target_positions.size(0);
    auto queries = mask_token.unsqueeze(0) + pos_emb.index_select(0, target_positions);
    auto q = queries.unsqueeze(0).expand({B, m, cfg_.width});
    auto seq = torch::cat({x, q}, 1);
    for (auto& block : blocks) seq = block->forward(seq);
    seq = norm->forward(seq);
    return out_proj->forward(seq.slice(1, seq.size(1) - m));
}

SemanticPredictorImpl::SemanticPredictorImpl(const PredictorConfig& cfg, int in_dim, int out_dim,
                                             int num_slots, int n_positions)
    : cfg_(cfg), num_slots_(num_slots) {
    in_proj = register_module("in_proj", torch::nn::Linear(in_dim, cfg.width));
    out_proj = register_module("out_proj", torch::nn::Linear(cfg.width, out_dim));
    slot_queries = register_parameter("slot_queries", torch::randn({num_slots, cfg.width}) * 0.02);
    pos_emb = register_parameter("pos_emb", torch::randn({n_positions, cfg.width}) * 0.02);
    for (int i = 0; i < cfg.depth; ++i)
        blocks.push_back(register_module("block" + std::to_string(i),
                                         TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio)));
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
}

torch::Tensor SemanticPredictorImpl::forward(const torch::Tensor& z_p, const torch::Tensor& positions) {
    auto B = z_p.size(0);
    auto x = in_proj->forward(z_p) + pos_emb.index_select(0, positions).unsqueeze(0);
    auto q = slot_queries.unsqueeze(0).expand({B, num_slots_, cfg_.width});
    auto seq = torch::cat({x, q}, 1);
    for (auto& block : blocks) seq = block->forward(seq);
    seq = norm->forward(seq);
    return out_proj->forward(seq.slice(1, seq.size(1) - num_slots_));
}

TokenizerModelImpl::TokenizerModelImpl(const TokenizerConfig& cfg) : cfg_(cfg) {
    const auto& e = cfg.encoder;
    context_enc = register_module("context_enc", ViTEncoder(e));
    target_enc = register_module("target_enc", ViTEncoder(e));
    // Target starts as an exact copy and is never gradient-updated.
    {
        torch::NoGradGuard guard;
        auto src = context_enc->named_parameters();
        for (auto& item : target_enc->named_parameters()) item.value().copy_(*src.find(item.key()));
    }
    for (auto& p : target_enc->parameters()) p.set_requires_grad(false);

    if (cfg.preset.use_vq) codebook = register_module("codebook", Codebook(cfg.codebook));
    if (cfg.preset.use_s2p)
        s2p = register_module(
            "s2p", PatchPredictor(cfg.predictor, e.slot_dim, e.width, e.n_patches()));
    if (cfg.preset.use_p2s)
        p2s = register_module(
            "p2s", SemanticPredictor(cfg.predictor, e.width, e.slot_dim, e.num_slots, e.n_patches()));
    p2p = register_module("p2p", PatchPredictor(cfg.predictor, e.width, e.width, e.n_patches()));
}

TokenizerForward TokenizerModelImpl::forward_losses(const torch::Tensor& frames, const MaskSpec& mask,
                                                    double vq_weight,
                                                    const std::optional<torch::Tensor>& frozen_ctx_indices,
                                                    const std::optional<torch::Tensor>& frozen_tgt_indices,
                                                    const std::optional<torch::Tensor>& frozen_ctx_residual) {
    const auto& e = cfg_.encoder;
    auto targets = mask.target_tensor();
    TORCH_CHECK(targets.numel() > 0, "mask has no target patches");

    torch::Tensor tgt_zp, tgt_zs;
    {
        torch::NoGradGuard guard;
        auto bundle = target_enc->encode_full(frames);
        tgt_zp = bundle.z_p.detach();
        tgt_zs = bundle.z_s.detach();
    }
    auto ctx = context_enc->encode(frames, mask);

    TokenizerForward out;
    out.losses.lambda1 = cfg_.lambda1;
    out.losses.lambda2 = cfg_.lambda2;
    out.losses.lambda3 = cfg_.lambda3;
    out.target_semantic = tgt_zs.reshape({-1, e.slot_dim});

    auto tgt_at_m = tgt_zp.index_select(1, targets);
    auto total = torch::zeros({}, frames.options());

    torch::Tensor s2p_input = ctx.z_s;
    if (codebook) {
        auto flat = ctx.z_s.reshape({-1, e.slot_dim});
        auto qc = frozen_ctx_indices ? codebook->quantize_with_indices(flat, *frozen_ctx_indices)
                                     : codebook->quantize(flat);
        out.context_indices = qc.indices;
        auto st = frozen_ctx_residual ? flat + *frozen_ctx_residual : qc.straight_through;
        s2p_input = st.reshape({-1, e.num_slots, e.slot_dim});
        {
            torch::NoGradGuard guard;
            out.target_indices = frozen_tgt_indices
                                     ? *frozen_tgt_indices
                                     : nearest_code_indices(out.target_semantic, codebook->codes);
        }
        auto l_vq = vq_weight * qc.commit_loss;
        out.losses.l_vq = l_vq.item<double>();
        total = total + l_vq;
    }

    if (s2p) {
        auto pred = s2p->forward(s2p_input, std::nullopt, targets);
        auto l = (pred - tgt_at_m).pow(2).mean();
        out.losses.l_s2p = l.item<double>();
        total = total + cfg_.lambda1 * l;
    }
    if (p2s) {
        auto pred = p2s->forward(ctx.z_p, ctx.positions);
        auto l = (pred - tgt_zs).pow(2).mean();
        out.losses.l_p2s = l.item<double>();
        total = total + cfg_.lambda2 * l;
    }
    {
        auto pred = p2p->forward(ctx.z_p, ctx.positions, targets);
        auto l = (pred - tgt_at_m).pow(2).mean();
        out.losses.l_p2p = l.item<double>();
        total = total + cfg_.lambda3 * l;
    }
    out.total = total;
    out.losses.total = total.item<double>();
    return out;
}

std::vector<torch::Tensor> TokenizerModelImpl::trainable_parameters() {
    std::vector<torch::Tensor> params;
    for (auto& p : context_enc->parameters()) params.push_back(p);
    if (s2p)
        for (auto& p : s2p->parameters()) params.push_back(p);
    if (p2s)
        for (auto& p : p2s->parameters()) params.push_back(p);
    for (auto& p : p2p->parameters()) params.push_back(p);
    return params;
}

void TokenizerModelImpl::update_target(double momentum) {
    ema_update(*target_enc, *context_enc, momentum);
}

TokenizerModelImpl::Tokens TokenizerModelImpl::tokenize(const torch::Tensor& frames) {
    torch::NoGradGuard guard;
    const auto& e = cfg_.encoder;
    auto bundle = target_enc->encode_full(frames);
    Tokens tok;
    tok.continuous = bundle.z_s.detach();
    tok.patch_tokens = bundle.z_p.detach();
    if (codebook) {
        auto flat = tok.continuous.reshape({-1, e.slot_dim});
        auto idx = nearest_code_indices(flat, codebook->codes);
        tok.indices = idx.reshape({-1, e.num_slots});
        tok.quantized = codebook->codes.index_select(0, idx).reshape({-1, e.num_slots, e.slot_dim});
    }
    return tok;
}

}  // namespace djepa
