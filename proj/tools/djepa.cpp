// Command-line front end: data generation, training, rollout and evaluation.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "djepa/eval.hpp"

using namespace djepa;
using nlohmann::json;

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"Discrete token representation learning and world-model rollout"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Render a seeded synthetic dataset");
    std::string gd_task = "sprites", gd_out = "data";
    int gd_count = 512, gd_length = 12;
    uint64_t gd_seed = 0;
    gen->add_option("--task", gd_task)->check(CLI::IsMember({"sprites", "balls"}));
    gen->add_option("--count", gd_count);
    gen->add_option("--length", gd_length);
    gen->add_option("--seed", gd_seed);
    gen->add_option("--out", gd_out)->required();

    // train-tokenizer
    auto* tt = app.add_subcommand("train-tokenizer", "Train the tokenizer (or the continuous baseline)");
    std::string tt_config, tt_preset, tt_resume;
    tt->add_option("--config", tt_config)->required()->check(CLI::ExistingFile);
    tt->add_option("--preset", tt_preset)->check(CLI::IsMember({"djepa", "ijepa"}));
    tt->add_option("--resume", tt_resume)->check(CLI::ExistingFile);

    // train-worldmodel
    auto* tw = app.add_subcommand("train-worldmodel", "Train a world model over frozen tokens");
    std::string tw_variant, tw_tokenizer, tw_config;
    tw->add_option("--variant", tw_variant)
        ->check(CLI::IsMember({"i2i", "r2i", "r2r-concat", "r2r-avgpool"}));
    tw->add_option("--tokenizer", tw_tokenizer)->check(CLI::ExistingFile);
    tw->add_option("--config", tw_config)->required()->check(CLI::ExistingFile);

    // rollout
    auto* ro = app.add_subcommand("rollout", "Autoregressive rollout from test conditioning windows");
    std::string ro_model, ro_tokenizer, ro_data, ro_out = "trace.pt";
    int ro_steps = 200;
    ro->add_option("--model", ro_model)->required()->check(CLI::ExistingFile);
    ro->add_option("--tokenizer", ro_tokenizer)->required()->check(CLI::ExistingFile);
    ro->add_option("--data", ro_data)->required()->check(CLI::ExistingDirectory);
    ro->add_option("--steps", ro_steps);
    ro->add_option("--out", ro_out);

    // train-probe
    auto* tp = app.add_subcommand("train-probe", "Fit a linear probe on pooled tokens");
    std::string tp_property = "color", tp_tokenizer, tp_data, tp_out = "probe.pt";
    std::string tp_pool = "semantic";
    int64_t tp_steps = 5000;
    uint64_t tp_seed = 0;
    tp->add_option("--property", tp_property)->check(CLI::IsMember({"color", "shape", "position"}));
    tp->add_option("--tokenizer", tp_tokenizer)->required()->check(CLI::ExistingFile);
    tp->add_option("--data", tp_data)->required()->check(CLI::ExistingDirectory);
    tp->add_option("--pool", tp_pool)->check(CLI::IsMember({"semantic", "patch"}));
    tp->add_option("--steps", tp_steps);
    tp->add_option("--seed", tp_seed);
    tp->add_option("--out", tp_out);

    // train-decoder
    auto* td = app.add_subcommand("train-decoder", "Train the pixel-class decoder");
    std::string td_config;
    td->add_option("--config", td_config)->required()->check(CLI::ExistingFile);

    // evaluate / run-experiment
    auto* ev = app.add_subcommand("evaluate", "Run or resume the staged experiment pipeline");
    std::string ev_task, ev_manifest, ev_out;
    ev->add_option("--task", ev_task)->check(CLI::IsMember({"sprites", "balls"}));
    ev->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
    ev->add_option("--out", ev_out);
    auto* rx = app.add_subcommand("run-experiment", "Alias of evaluate");
    std::string rx_manifest;
    rx->add_option("--manifest", rx_manifest)->required()->check(CLI::ExistingFile);

    // plot
    auto* pl = app.add_subcommand("plot", "Render per-metric SVG line charts from a curves CSV");
    std::string pl_csv, pl_out = "plots";
    pl->add_option("--csv", pl_csv)->required()->check(CLI::ExistingFile);
    pl->add_option("--out", pl_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto ds = gen_dataset(task_from_string(gd_task), gd_count, gd_length, gd_seed);
            save_dataset(ds, gd_out);
            std::cout << "wrote " << ds.count << " sequences of length " << ds.length << " to "
                      << gd_out << "\n";
        } else if (*tt) {
            auto cfg = TrainConfig::load(tt_config);
            if (!tt_preset.empty()) cfg.preset = tt_preset;
            auto ckpt = train_tokenizer(cfg, tt_resume.empty() ? std::filesystem::path{}
                                                               : std::filesystem::path{tt_resume});
            std::cout << "final checkpoint: " << ckpt << "\n";
        } else if (*tw) {
            auto cfg = WMTrainConfig::load(tw_config);
            if (!tw_variant.empty()) cfg.variant = tw_variant;
            if (!tw_tokenizer.empty()) cfg.tokenizer_ckpt = tw_tokenizer;
            std::cout << "final checkpoint: " << train_worldmodel(cfg) << "\n";
        } else if (*ro) {
            auto tokenizer = load_tokenizer(ro_tokenizer);
            auto wm = load_worldmodel(ro_model);
            auto ds = load_dataset(ro_data);
            torch::NoGradGuard guard;
            auto cache = tokenize_dataset(tokenizer, ds, wm->cfg_.variant);
            std::vector<torch::Tensor> windows;
            for (size_t s = 0; s < ds.sequences.size(); ++s) {
                auto& src = wm->cfg_.variant == WMVariant::I2I ? cache.indices[s] : cache.vectors[s];
                TORCH_CHECK(src.size(0) >= wm->cfg_.h_c, "sequence shorter than H_c");
                windows.push_back(src.slice(0, 0, wm->cfg_.h_c));
            }
            std::optional<torch::Tensor> rows;
            if (tokenizer->codebook) rows = tokenizer->codebook->codes;
            auto trace = rollout(wm, torch::stack(windows, 0), ro_steps, rows);
            save_trace(trace, ro_out);
            std::cout << "wrote trace with " << trace.steps() << " steps to " << ro_out << "\n";
        } else if (*tp) {
            auto tokenizer = load_tokenizer(tp_tokenizer);
            auto ds = load_dataset(tp_data);
            auto data = pooled_sprite_data(tokenizer, ds, tp_pool == "semantic");
            ProbeTrainConfig cfg;
            cfg.total_steps = tp_steps;
            cfg.seed = tp_seed;
            torch::Tensor labels;
            int n_classes;
            if (tp_property == "color") {
                labels = data.color;
                n_classes = kNumColors;
            } else if (tp_property == "shape") {
                labels = data.shape;
                n_classes = 4;
            } else {
                labels = data.position;
                n_classes = kGridCells * kGridCells;
            }
            auto probe = train_prober(data.pooled, labels, n_classes, cfg);
            json meta{{"in_dim", data.pooled.size(1)}, {"n_classes", n_classes}};
            save_checkpoint(tp_out, *probe, meta.dump(), cfg.total_steps);
            std::cout << "train accuracy: " << probe_accuracy(probe, data.pooled, labels) << "\n";
        } else if (*td) {
            auto cfg = DecoderTrainConfig::load(td_config);
            std::cout << "final checkpoint: " << train_decoder(cfg) << "\n";
        } else if (*ev || *rx) {
            std::filesystem::path manifest = *ev ? ev_manifest : rx_manifest;
            if (*ev && (!ev_out.empty() || !ev_task.empty())) {
                // Flags override the manifest; the effective manifest is cached
                // next to the outputs and echoed into the report.
                json m = json::parse(read_text_file(manifest));
                if (!ev_task.empty()) m["task"] = ev_task;
                if (!ev_out.empty()) m["out_dir"] = ev_out;
                std::filesystem::path out = m.at("out_dir").get<std::string>();
                std::filesystem::create_directories(out);
                manifest = out / "manifest.json";
                write_text_file_atomic(manifest, m.dump(2) + "\n");
            }
            auto dir = run_experiment(manifest);
            std::cout << "experiment directory: " << dir << "\n";
        } else if (*pl) {
            auto curves = parse_csv(pl_csv);
            emit_plots(curves, pl_out);
            std::cout << "wrote " << pl_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
