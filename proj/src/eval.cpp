#include "djepa/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace djepa {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

PooledSpriteData pooled_sprite_data(TokenizerModel& tokenizer, const Dataset& ds,
                                    bool semantic_pool, int batch) {
    TORCH_CHECK(ds.task == Task::Sprites, "sprite probes need a sprite dataset");
    torch::NoGradGuard guard;
    std::vector<const Image*> frames;
    std::vector<int64_t> color, shape, position;
    for (const auto& seq : ds.sequences) {
        for (int t = 0; t < seq.length(); ++t) {
            frames.push_back(&seq.frames[t]);
            const auto& l = seq.sprite_labels[t];
            color.push_back(l.color_idx);
            shape.push_back(static_cast<int64_t>(l.shape));
            position.push_back(l.cell_row * kGridCells + l.cell_col);
        }
    }
    std::vector<torch::Tensor> pooled_parts;
    for (size_t lo = 0; lo < frames.size(); lo += batch) {
        size_t hi = std::min(frames.size(), lo + batch);
        std::vector<const Image*> chunk(frames.begin() + lo, frames.begin() + hi);
        auto x = frames_to_tensor(chunk, ds.channel_mean, ds.channel_std);
        auto tok = tokenizer->tokenize(x);
        pooled_parts.push_back(semantic_pool ? tok.quantized.mean(1) : tok.patch_tokens.mean(1));
    }
    PooledSpriteData out;
    out.pooled = torch::cat(pooled_parts, 0);
    out.color = torch::tensor(color, torch::kInt64);
    out.shape = torch::tensor(shape, torch::kInt64);
    out.position = torch::tensor(position, torch::kInt64);
    return out;
}

ProbeSet train_sprite_probes(TokenizerModel& tokenizer, const Dataset& train,
                             bool semantic_pool, const ProbeTrainConfig& cfg) {
    auto data = pooled_sprite_data(tokenizer, train, semantic_pool);
    ProbeSet probes;
    probes.color = train_prober(data.pooled, data.color, kNumColors, cfg);
    probes.shape = train_prober(data.pooled, data.shape, 4, cfg);
    probes.position = train_prober(data.pooled, data.position, kGridCells * kGridCells, cfg);
    return probes;
}

namespace {

// Conditioning windows of the first h_c frames of every test sequence.
torch::Tensor conditioning_windows(TokenizerModel& tokenizer, const Dataset& test,
                                   WMVariant variant, int h_c) {
    TORCH_CHECK(test.length >= h_c, "test sequences shorter than the conditioning horizon");
    auto cache = tokenize_dataset(tokenizer, test, variant);
    std::vector<torch::Tensor> windows;
    for (size_t s = 0; s < test.sequences.size(); ++s) {
        if (variant == WMVariant::I2I)
            windows.push_back(cache.indices[s].slice(0, 0, h_c));
        else
            windows.push_back(cache.vectors[s].slice(0, 0, h_c));
    }
    return torch::stack(windows, 0);
}

// Pooled probe input per sequence at one rollout step.
torch::Tensor pooled_at_step(const RolloutTrace& trace, const torch::Tensor& codebook_rows,
                             int64_t step) {
    if (trace.variant == WMVariant::I2I || trace.variant == WMVariant::R2I) {
        auto idx = trace.indices.select(1, step);  // B x L
        auto rows = codebook_rows.index_select(0, idx.reshape({-1}));
        return rows.reshape({idx.size(0), idx.size(1), -1}).mean(1);
    }
    return trace.vectors.select(1, step).mean(1);
}

}  // namespace

std::vector<MetricCurve> eval_dancing(TokenizerModel& tokenizer, WorldModel& wm, ProbeSet& probes,
                                      const Dataset& test, int horizon, const std::string& method,
                                      uint64_t seed, const std::filesystem::path& outcome_log) {
    TORCH_CHECK(test.task == Task::Sprites, "eval_dancing needs a sprite dataset");
    TORCH_CHECK(horizon >= wm->cfg_.h_p, "horizon must be >= H_p");
    torch::NoGradGuard guard;
    const auto& cfg = wm->cfg_;
    auto windows = conditioning_windows(tokenizer, test, cfg.variant, cfg.h_c);
    std::optional<torch::Tensor> rows;
    if (tokenizer->codebook) rows = tokenizer->codebook->codes;
    auto trace = rollout(wm, windows, horizon, rows);

    int64_t B = static_cast<int64_t>(test.sequences.size());
    // Ground-truth symbolic labels over the whole horizon, from the pattern.
    std::vector<std::vector<int>> gt_color(B);
    std::vector<int> gt_shape(B), gt_pos(B);
    for (int64_t s = 0; s < B; ++s) {
        const auto& seq = test.sequences[s];
        gt_color[s] = gen_color_sequence(*seq.pattern, cfg.h_c + horizon);
        gt_shape[s] = static_cast<int>(seq.sprite_labels[0].shape);
        gt_pos[s] = seq.sprite_labels[0].cell_row * kGridCells + seq.sprite_labels[0].cell_col;
    }

    std::ofstream log;
    if (!outcome_log.empty()) {
        log.open(outcome_log);
        log << "sequence,step,metric,correct\n";
    }

    MetricCurve color{method, "color_accuracy", seed, {}};
    MetricCurve shape{method, "shape_accuracy", seed, {}};
    MetricCurve position{method, "position_accuracy", seed, {}};
    auto dummy_rows = rows ? *rows : torch::Tensor();
    for (int step = 0; step < horizon; ++step) {
        auto pooled = pooled_at_step(trace, dummy_rows, step);
        auto pc = probe_predict(probes.color, pooled);
        auto ps = probe_predict(probes.shape, pooled);
        auto pp = probe_predict(probes.position, pooled);
        auto pc_a = pc.accessor<int64_t, 1>();
        auto ps_a = ps.accessor<int64_t, 1>();
        auto pp_a = pp.accessor<int64_t, 1>();
        int64_t c_ok = 0, s_ok = 0, p_ok = 0;
        for (int64_t s = 0; s < B; ++s) {
            bool c = pc_a[s] == gt_color[s][cfg.h_c + step];
            bool sh = ps_a[s] == gt_shape[s];
            bool po = pp_a[s] == gt_pos[s];
            c_ok += c;
            s_ok += sh;
            p_ok += po;
            if (log.is_open()) {
                log << s << "," << step << ",color_accuracy," << int(c) << "\n";
                log << s << "," << step << ",shape_accuracy," << int(sh) << "\n";
                log << s << "," << step << ",position_accuracy," << int(po) << "\n";
            }
        }
        color.values.push_back(double(c_ok) / double(B));
        shape.values.push_back(double(s_ok) / double(B));
        position.values.push_back(double(p_ok) / double(B));
    }
    return {color, shape, position};
}

std::vector<MetricCurve> eval_blinking(TokenizerModel& tokenizer, WorldModel& wm,
                                       PixelDecoder& decoder, const Dataset& test, int horizon,
                                       const std::string& method, uint64_t seed,
                                       const std::filesystem::path& outcome_log) {
    TORCH_CHECK(test.task == Task::Balls, "eval_blinking needs a ball dataset");
    TORCH_CHECK(horizon >= wm->cfg_.h_p, "horizon must be >= H_p");
    torch::NoGradGuard guard;
    const auto& cfg = wm->cfg_;
    auto windows = conditioning_windows(tokenizer, test, cfg.variant, cfg.h_c);
    std::optional<torch::Tensor> rows;
    if (tokenizer->codebook) rows = tokenizer->codebook->codes;
    auto trace = rollout(wm, windows, horizon, rows);

    int64_t B = static_cast<int64_t>(test.sequences.size());
    auto white = reset_to_white(test.sequences.front().frames.front());
    std::vector<const Image*> white_batch(B, &white);
    auto white_frames = frames_to_tensor(white_batch, test.channel_mean, test.channel_std);

    std::ofstream log;
    if (!outcome_log.empty()) {
        log.open(outcome_log);
        log << "sequence,step,pixel_accuracy,mse_x100\n";
    }

    const auto& palette = ball_palette();
    MetricCurve acc{method, "pixel_accuracy", seed, {}};
    MetricCurve mse{method, "mse_x100", seed, {}};
    const int64_t n_pixels = static_cast<int64_t>(kImageSize) * kImageSize;
    for (int step = 0; step < horizon; ++step) {
        torch::Tensor tokens;
        if (cfg.discrete()) {
            auto idx = trace.indices.select(1, step);
            tokens = rows->index_select(0, idx.reshape({-1}))
                         .reshape({B, idx.size(1), -1});
        } else {
            tokens = trace.vectors.select(1, step);
        }
        auto pred = decode_pixels(decoder, tokens, white_frames).contiguous();  // B x H x W uint8
        auto pa = pred.accessor<uint8_t, 3>();
        double acc_sum = 0.0, mse_sum = 0.0;
        for (int64_t s = 0; s < B; ++s) {
            auto gt = ball_class_map(*test.sequences[s].ball_spec, cfg.h_c + step);
            int64_t ok = 0;
            double sq = 0.0;
            for (int y = 0; y < kImageSize; ++y) {
                for (int x = 0; x < kImageSize; ++x) {
                    uint8_t g = gt[static_cast<size_t>(y) * kImageSize + x];
                    uint8_t p = pa[s][y][x];
                    ok += (g == p);
                    if (g != p) {
                        auto to_rgb = [&](uint8_t cls) -> std::array<double, 3> {
                            if (cls == 0) return {0, 0, 0};
                            if (cls == 1) return {1, 1, 1};
                            const Rgb& c = palette[cls - 2];
                            return {c.r / 255.0, c.g / 255.0, c.b / 255.0};
                        };
                        auto a = to_rgb(g), b = to_rgb(p);
                        for (int ch = 0; ch < 3; ++ch) sq += (a[ch] - b[ch]) * (a[ch] - b[ch]);
                    }
                }
            }
            double seq_acc = double(ok) / double(n_pixels);
            double seq_mse = 100.0 * sq / double(n_pixels * 3);
            acc_sum += seq_acc;
            mse_sum += seq_mse;
            if (log.is_open())
                log << s << "," << step << "," << fmt_double(seq_acc) << "," << fmt_double(seq_mse) << "\n";
        }
        acc.values.push_back(acc_sum / double(B));
        mse.values.push_back(mse_sum / double(B));
    }
    return {acc, mse};
}

double decoder_teacher_forced_accuracy(TokenizerModel& tokenizer, PixelDecoder& decoder,
                                       const Dataset& ds, bool semantic_tokens, int batch) {
    torch::NoGradGuard guard;
    auto white = reset_to_white(ds.sequences.front().frames.front());
    double total_acc = 0.0;
    int64_t n_frames = 0;
    std::vector<const Image*> frames;
    std::vector<std::vector<uint8_t>> gts;
    auto flush = [&]() {
        if (frames.empty()) return;
        auto x = frames_to_tensor(frames, ds.channel_mean, ds.channel_std);
        auto tok = tokenizer->tokenize(x);
        auto tokens = semantic_tokens ? tok.quantized : tok.patch_tokens;
        std::vector<const Image*> white_batch(frames.size(), &white);
        auto wf = frames_to_tensor(white_batch, ds.channel_mean, ds.channel_std);
        auto pred = decode_pixels(decoder, tokens, wf).contiguous();
        auto pa = pred.accessor<uint8_t, 3>();
        for (size_t b = 0; b < frames.size(); ++b) {
            int64_t ok = 0;
            for (int y = 0; y < kImageSize; ++y)
                for (int x2 = 0; x2 < kImageSize; ++x2)
                    ok += (pa[b][y][x2] == gts[b][static_cast<size_t>(y) * kImageSize + x2]);
            total_acc += double(ok) / double(kImageSize * kImageSize);
        }
        n_frames += static_cast<int64_t>(frames.size());
        frames.clear();
        gts.clear();
    };
    for (const auto& seq : ds.sequences) {
        for (int t = 0; t < seq.length(); ++t) {
            frames.push_back(&seq.frames[t]);
            gts.push_back(ball_class_map(*seq.ball_spec, t));
            if (static_cast<int>(frames.size()) == batch) flush();
        }
    }
    flush();
    return total_acc / double(n_frames);
}

void emit_csv(const std::vector<MetricCurve>& curves, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,metric,step,value,seed\n";
    for (const auto& c : curves)
        for (size_t i = 0; i < c.values.size(); ++i)
            out << c.method << "," << c.metric << "," << i << "," << fmt_double(c.values[i]) << ","
                << c.seed << "\n";
    if (!out) throw std::runtime_error("write failure: " + path.string());
}

std::vector<MetricCurve> parse_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<MetricCurve> curves;
    auto find = [&](const std::string& method, const std::string& metric, uint64_t seed) -> MetricCurve& {
        for (auto& c : curves)
            if (c.method == method && c.metric == metric && c.seed == seed) return c;
        curves.push_back(MetricCurve{method, metric, seed, {}});
        return curves.back();
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string method, metric, step, value, seed;
        std::getline(ss, method, ',');
        std::getline(ss, metric, ',');
        std::getline(ss, step, ',');
        std::getline(ss, value, ',');
        std::getline(ss, seed, ',');
        auto& c = find(method, metric, std::stoull(seed));
        size_t idx = std::stoul(step);
        if (c.values.size() <= idx) c.values.resize(idx + 1);
        c.values[idx] = std::stod(value);
    }
    return curves;
}

void emit_plots(const std::vector<MetricCurve>& curves, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::map<std::string, std::vector<const MetricCurve*>> by_metric;
    for (const auto& c : curves) by_metric[c.metric].push_back(&c);
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    for (const auto& [metric, group] : by_metric) {
        const double W = 720, H = 480, ml = 70, mr = 20, mt = 40, mb = 50;
        double lo = 1e300, hi = -1e300;
        size_t steps = 0;
        for (const auto* c : group) {
            for (double v : c->values) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            steps = std::max(steps, c->values.size());
        }
        if (hi <= lo) hi = lo + 1.0;
        double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;

        std::ostringstream svg;
        svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
        svg << "<rect width='100%' height='100%' fill='white'/>\n";
        svg << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << metric
            << "</text>\n";
        svg << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
            << "' stroke='black'/>\n";
        svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
            << "' stroke='black'/>\n";
        auto sx = [&](double step) {
            return ml + (W - ml - mr) * (steps > 1 ? step / double(steps - 1) : 0.0);
        };
        auto sy = [&](double v) { return H - mb - (H - mt - mb) * (v - lo) / (hi - lo); };
        for (int tick = 0; tick <= 4; ++tick) {
            double v = lo + (hi - lo) * tick / 4.0;
            svg << "<text x='" << ml - 8 << "' y='" << sy(v) + 4
                << "' text-anchor='end' font-size='11'>" << std::fixed << v << "</text>\n";
            svg.unsetf(std::ios::fixed);
            double s = (steps - 1) * tick / 4.0;
            svg << "<text x='" << sx(s) << "' y='" << H - mb + 18
                << "' text-anchor='middle' font-size='11'>" << static_cast<int>(s) << "</text>\n";
        }
        svg << "<text x='" << (W + ml - mr) / 2 << "' y='" << H - 12
            << "' text-anchor='middle' font-size='12'>rollout step</text>\n";
        int ci = 0;
        for (const auto* c : group) {
            svg << "<polyline fill='none' stroke='" << colors[ci % 6] << "' stroke-width='1.5' points='";
            for (size_t i = 0; i < c->values.size(); ++i)
                svg << sx(double(i)) << "," << sy(c->values[i]) << " ";
            svg << "'/>\n";
            svg << "<text x='" << W - mr - 10 << "' y='" << mt + 16 * ci + 12
                << "' text-anchor='end' font-size='12' fill='" << colors[ci % 6] << "'>" << c->method
                << "</text>\n";
            ++ci;
        }
        svg << "</svg>\n";
        std::string fname = metric + ".svg";
        write_text_file_atomic(dir / fname, svg.str());
    }
}

namespace {

ProbeTrainConfig probe_config_from_json(const json& j, uint64_t default_seed) {
    ProbeTrainConfig c;
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.seed = j.value("seed", default_seed);
    return c;
}

void save_probe(const std::filesystem::path& path, ProbeHead& head, int in_dim, int n_classes) {
    json cfg;
    cfg["in_dim"] = in_dim;
    cfg["n_classes"] = n_classes;
    save_checkpoint(path, *head, cfg.dump(), 0);
}

ProbeHead load_probe(const std::filesystem::path& path) {
    auto meta = read_checkpoint_meta(path);
    auto cfg = json::parse(meta.config_json);
    ProbeHead head(cfg.at("in_dim").get<int>(), cfg.at("n_classes").get<int>());
    load_checkpoint_into(path, *head);
    return head;
}

}  // namespace

std::filesystem::path run_experiment(const std::filesystem::path& manifest_path) {
    json manifest = json::parse(read_text_file(manifest_path));
    Task task = task_from_string(manifest.at("task").get<std::string>());
    std::filesystem::path out_dir = manifest.at("out_dir").get<std::string>();
    uint64_t seed = manifest.value("seed", 0ull);
    std::filesystem::create_directories(out_dir);

    json data = manifest.value("data", json::object());
    int h_default = (task == Task::Sprites) ? 4 : 6;
    int train_count = data.value("train_count", 512);
    int train_length = data.value("train_length", 12);
    int test_count = data.value("test_count", 64);
    int test_length = data.value("test_length", h_default);

    // --- stage: data ---
    auto train_dir = out_dir / "data" / "train";
    auto test_dir = out_dir / "data" / "test";
    if (!std::filesystem::exists(train_dir / "manifest.json"))
        save_dataset(gen_dataset(task, train_count, train_length, seed), train_dir);
    if (!std::filesystem::exists(test_dir / "manifest.json"))
        save_dataset(gen_dataset(task, test_count, test_length, seed + 1), test_dir);

    // --- stage: tokenizers ---
    auto make_tok_cfg = [&](const char* key, const char* preset, const char* subdir) {
        TrainConfig c = TrainConfig::from_json(manifest.value(key, json::object()).dump());
        c.preset = preset;
        c.dataset = train_dir.string();
        c.out_dir = (out_dir / subdir).string();
        if (!manifest.value(key, json::object()).contains("seed")) c.seed = seed;
        return c;
    };
    auto tok_cfg = make_tok_cfg("tokenizer", "djepa", "tokenizer");
    auto base_cfg = make_tok_cfg("baseline_tokenizer", "ijepa", "tokenizer_baseline");
    auto tok_ckpt = out_dir / "tokenizer" / "checkpoint_final.pt";
    auto base_ckpt = out_dir / "tokenizer_baseline" / "checkpoint_final.pt";
    if (!std::filesystem::exists(tok_ckpt)) train_tokenizer(tok_cfg);
    if (!std::filesystem::exists(base_ckpt)) train_tokenizer(base_cfg);

    // --- stage: world models ---
    auto make_wm_cfg = [&](const char* key, const std::string& default_variant,
                           const std::filesystem::path& tokenizer, const char* subdir) {
        WMTrainConfig c = WMTrainConfig::from_json(manifest.value(key, json::object()).dump());
        if (!manifest.value(key, json::object()).contains("variant")) c.variant = default_variant;
        c.tokenizer_ckpt = tokenizer.string();
        c.dataset = train_dir.string();
        c.out_dir = (out_dir / subdir).string();
        c.h_c = manifest.value(key, json::object()).value("h_c", h_default);
        c.h_p = manifest.value(key, json::object()).value("h_p", h_default);
        if (!manifest.value(key, json::object()).contains("seed")) c.seed = seed;
        return c;
    };
    std::string base_variant = (task == Task::Sprites) ? "r2r-avgpool" : "r2r-concat";
    auto wm_cfg = make_wm_cfg("worldmodel", "i2i", tok_ckpt, "wm");
    auto base_wm_cfg = make_wm_cfg("baseline_worldmodel", base_variant, base_ckpt, "wm_baseline");
    auto wm_ckpt = out_dir / "wm" / "checkpoint_final.pt";
    auto base_wm_ckpt = out_dir / "wm_baseline" / "checkpoint_final.pt";
    if (!std::filesystem::exists(wm_ckpt)) train_worldmodel(wm_cfg);
    if (!std::filesystem::exists(base_wm_ckpt)) train_worldmodel(base_wm_cfg);

    // --- stage: heads ---
    auto probes_dir = out_dir / "probes";
    auto dec_ckpt = out_dir / "decoder" / "checkpoint_final.pt";
    auto base_dec_ckpt = out_dir / "decoder_baseline" / "checkpoint_final.pt";
    if (task == Task::Sprites) {
        std::filesystem::create_directories(probes_dir);
        auto probe_cfg = probe_config_from_json(manifest.value("probe", json::object()), seed);
        auto train_ds = load_dataset(train_dir);
        for (auto [name, ckpt, semantic] : {std::tuple{"djepa", tok_ckpt, true},
                                            std::tuple{"ijepa", base_ckpt, false}}) {
            auto marker = probes_dir / (std::string(name) + "_position.pt");
            if (std::filesystem::exists(marker)) continue;
            auto tokenizer = load_tokenizer(ckpt);
            auto probes = train_sprite_probes(tokenizer, train_ds, semantic, probe_cfg);
            int dim = static_cast<int>(probes.color->linear->weight.size(1));
            save_probe(probes_dir / (std::string(name) + "_color.pt"), probes.color, dim, kNumColors);
            save_probe(probes_dir / (std::string(name) + "_shape.pt"), probes.shape, dim, 4);
            save_probe(probes_dir / (std::string(name) + "_position.pt"), probes.position, dim, 16);
        }
    } else {
        auto make_dec_cfg = [&](const std::filesystem::path& tokenizer, const char* source,
                                const char* subdir) {
            DecoderTrainConfig c =
                DecoderTrainConfig::from_json(manifest.value("decoder", json::object()).dump());
            c.tokenizer_ckpt = tokenizer.string();
            c.dataset = train_dir.string();
            c.out_dir = (out_dir / subdir).string();
            c.token_source = source;
            if (!manifest.value("decoder", json::object()).contains("seed")) c.seed = seed;
            return c;
        };
        if (!std::filesystem::exists(dec_ckpt))
            train_decoder(make_dec_cfg(tok_ckpt, "semantic", "decoder"));
        if (!std::filesystem::exists(base_dec_ckpt))
            train_decoder(make_dec_cfg(base_ckpt, "patch", "decoder_baseline"));
    }

    // --- stage: eval ---
    auto eval_dir = out_dir / "eval";
    auto report_path = eval_dir / "report.json";
    if (!std::filesystem::exists(report_path)) {
        std::filesystem::create_directories(eval_dir);
        json eval_cfg = manifest.value("eval", json::object());
        int horizon = eval_cfg.value("horizon", task == Task::Sprites ? 200 : 1000);
        auto test_ds = load_dataset(test_dir);
        auto tokenizer = load_tokenizer(tok_ckpt);
        auto baseline = load_tokenizer(base_ckpt);
        auto wm = load_worldmodel(wm_ckpt);
        auto base_wm = load_worldmodel(base_wm_ckpt);
        std::string method = "djepa-" + to_string(wm->cfg_.variant);
        std::string base_method = "ijepa-" + to_string(base_wm->cfg_.variant);

        std::vector<MetricCurve> curves;
        json report;
        report["manifest"] = manifest;
        report["horizon"] = horizon;
        if (task == Task::Sprites) {
            ProbeSet probes{load_probe(probes_dir / "djepa_color.pt"),
                            load_probe(probes_dir / "djepa_shape.pt"),
                            load_probe(probes_dir / "djepa_position.pt")};
            ProbeSet base_probes{load_probe(probes_dir / "ijepa_color.pt"),
                                 load_probe(probes_dir / "ijepa_shape.pt"),
                                 load_probe(probes_dir / "ijepa_position.pt")};
            auto held_out = pooled_sprite_data(tokenizer, test_ds, true);
            auto held_out_base = pooled_sprite_data(baseline, test_ds, false);
            report["probe_accuracy"] = {
                {"djepa",
                 {{"color", probe_accuracy(probes.color, held_out.pooled, held_out.color)},
                  {"shape", probe_accuracy(probes.shape, held_out.pooled, held_out.shape)},
                  {"position", probe_accuracy(probes.position, held_out.pooled, held_out.position)}}},
                {"ijepa",
                 {{"color", probe_accuracy(base_probes.color, held_out_base.pooled, held_out_base.color)},
                  {"shape", probe_accuracy(base_probes.shape, held_out_base.pooled, held_out_base.shape)},
                  {"position",
                   probe_accuracy(base_probes.position, held_out_base.pooled, held_out_base.position)}}}};
            auto c1 = eval_dancing(tokenizer, wm, probes, test_ds, horizon, method, seed,
                                   eval_dir / "outcomes_djepa.csv");
            auto c2 = eval_dancing(baseline, base_wm, base_probes, test_ds, horizon, base_method, seed,
                                   eval_dir / "outcomes_ijepa.csv");
            curves.insert(curves.end(), c1.begin(), c1.end());
            curves.insert(curves.end(), c2.begin(), c2.end());
        } else {
            auto decoder = load_decoder(dec_ckpt);
            auto base_decoder = load_decoder(base_dec_ckpt);
            report["decoder_teacher_forced_accuracy"] = {
                {"djepa", decoder_teacher_forced_accuracy(tokenizer, decoder, test_ds, true)},
                {"ijepa", decoder_teacher_forced_accuracy(baseline, base_decoder, test_ds, false)}};
            auto c1 = eval_blinking(tokenizer, wm, decoder, test_ds, horizon, method, seed,
                                    eval_dir / "outcomes_djepa.csv");
            auto c2 = eval_blinking(baseline, base_wm, base_decoder, test_ds, horizon, base_method,
                                    seed, eval_dir / "outcomes_ijepa.csv");
            curves.insert(curves.end(), c1.begin(), c1.end());
            curves.insert(curves.end(), c2.begin(), c2.end());
        }
        emit_csv(curves, eval_dir / "curves.csv");
        emit_plots(curves, eval_dir / "plots");
        write_text_file_atomic(report_path, report.dump(2) + "\n");
    }
    return out_dir;
}

}  // namespace djepa
