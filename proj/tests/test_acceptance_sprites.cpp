#include "djepa/eval.hpp"

// doctest must come after torch: c10's logging header clobbers CHECK.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>

#include <json.hpp>

using namespace djepa;

namespace {

std::filesystem::path run_dir() {
    if (const char* env = std::getenv("DJEPA_ACCEPTANCE_DIR")) return env;
    return std::filesystem::current_path() / "acceptance";
}

const MetricCurve& find_curve(const std::vector<MetricCurve>& curves, const std::string& method,
                              const std::string& metric) {
    for (const auto& c : curves)
        if (c.method == method && c.metric == metric) return c;
    throw std::runtime_error("missing curve " + method + "/" + metric);
}

}  // namespace

// Long-horizon sprite-color stability at desk scale. Artifacts are cached under
// the run directory, so reruns only re-check the thresholds.
TEST_CASE("criterion 5: sprite color rollout stability") {
    torch::set_num_threads(1);
    auto out_dir = run_dir() / "sprites";
    auto manifest_path = run_dir() / "sprites_manifest.json";
    std::filesystem::create_directories(run_dir());
    if (!std::filesystem::exists(manifest_path)) {
        nlohmann::json m{
            {"task", "sprites"},
            {"out_dir", out_dir.string()},
            {"seed", 1},
            {"data",
             {{"train_count", 4096}, {"train_length", 12}, {"test_count", 128}, {"test_length", 4}}},
            {"tokenizer", {{"total_steps", 20000}, {"codebook_size", 256}}},
            {"baseline_tokenizer", {{"total_steps", 8000}}},
            {"worldmodel", {{"total_steps", 6000}}},
            {"baseline_worldmodel", {{"total_steps", 6000}}},
            {"eval", {{"horizon", 200}}}};
        write_text_file_atomic(manifest_path, m.dump(2));
    }
    run_experiment(manifest_path);

    auto report = nlohmann::json::parse(read_text_file(out_dir / "eval" / "report.json"));
    double probe_color = report.at("probe_accuracy").at("djepa").at("color").get<double>();
    auto curves = parse_csv(out_dir / "eval" / "curves.csv");
    const auto& djepa = find_curve(curves, "djepa-i2i", "color_accuracy");
    const auto& base = find_curve(curves, "ijepa-r2r-avgpool", "color_accuracy");
    REQUIRE(djepa.values.size() == 200);
    REQUIRE(base.values.size() == 200);

    bool probe_ok = probe_color >= 0.95;
    // Step numbering is 1-based in the criteria; values[k] is step k+1.
    double stability_gap = std::abs(djepa.values[199] - djepa.values[9]);
    bool stable_ok = stability_gap <= 0.05;
    double base_drop = base.values[19] - base.values[199];
    bool drop_ok = base_drop >= 0.10;

    std::printf(
        "[acceptance 5/9] sprite trend (probe color %.3f >= 0.95; |acc200-acc10| %.3f <= 0.05; "
        "baseline drop %.3f >= 0.10): %s\n",
        probe_color, stability_gap, base_drop,
        (probe_ok && stable_ok && drop_ok) ? "PASS" : "FAIL");
    std::fflush(stdout);
    CHECK(probe_ok);
    CHECK(stable_ok);
    CHECK(drop_ok);
}
