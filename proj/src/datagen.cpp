#include "djepa/datagen.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace djepa {

using nlohmann::json;

std::string to_string(PatternKind k) {
    switch (k) {
        case PatternKind::Linear: return "linear";
        case PatternKind::Repeat2: return "repeat2";
        case PatternKind::Zigzag3: return "zigzag3";
        case PatternKind::Repeat3: return "repeat3";
    }
    throw std::logic_error("bad PatternKind");
}

PatternKind pattern_kind_from_string(const std::string& s) {
    if (s == "linear") return PatternKind::Linear;
    if (s == "repeat2") return PatternKind::Repeat2;
    if (s == "zigzag3") return PatternKind::Zigzag3;
    if (s == "repeat3") return PatternKind::Repeat3;
    throw std::invalid_argument("unknown pattern kind: " + s);
}

std::string to_string(Task t) { return t == Task::Sprites ? "sprites" : "balls"; }

Task task_from_string(const std::string& s) {
    if (s == "sprites") return Task::Sprites;
    if (s == "balls") return Task::Balls;
    throw std::invalid_argument("unknown task: " + s);
}

void PatternSpec::validate() const {
    auto check_color = [](int c) {
        if (c < 0 || c >= kNumColors) throw std::invalid_argument("color index out of [0,6]");
    };
    switch (kind) {
        case PatternKind::Linear:
            check_color(start);
            if (hop < 1 || hop > 6) throw std::invalid_argument("linear hop must be in [1,6]");
            break;
        case PatternKind::Repeat2:
            check_color(colors[0]);
            check_color(colors[1]);
            if (colors[0] == colors[1]) throw std::invalid_argument("repeat2 colors must be distinct");
            break;
        case PatternKind::Zigzag3:
        case PatternKind::Repeat3:
            for (int i = 0; i < 3; ++i) check_color(colors[i]);
            if (colors[0] == colors[1] || colors[0] == colors[2] || colors[1] == colors[2])
                throw std::invalid_argument("three-color patterns need pairwise distinct colors");
            break;
    }
}

void BlinkingBallSpec::validate() const {
    std::array<bool, 4> seen = {false, false, false, false};
    for (int p : position_pattern) {
        if (p < 0 || p >= 4 || seen[p]) throw std::invalid_argument("position_pattern must be a permutation of {0,1,2,3}");
        seen[p] = true;
    }
    if (color_pattern.empty() || color_pattern.size() > kNumBallColors)
        throw std::invalid_argument("color_pattern length must be in [1,5]");
    std::set<int> distinct(color_pattern.begin(), color_pattern.end());
    if (distinct.size() != color_pattern.size())
        throw std::invalid_argument("color_pattern entries must be distinct");
    for (int c : color_pattern)
        if (c < 0 || c >= kNumBallColors) throw std::invalid_argument("ball color index out of [0,4]");
}

const std::array<std::array<int, 2>, 4>& ball_centers() {
    static const std::array<std::array<int, 2>, 4> c = {{{16, 16}, {48, 16}, {16, 48}, {48, 48}}};
    return c;
}

std::vector<int> gen_color_sequence(const PatternSpec& spec, int length) {
    spec.validate();
    if (length < 1) throw std::invalid_argument("length must be >= 1");
    std::vector<int> out(length);
    for (int t = 0; t < length; ++t) {
        switch (spec.kind) {
            case PatternKind::Linear:
                out[t] = (spec.start + t * spec.hop) % kNumColors;
                break;
            case PatternKind::Repeat2:
                out[t] = spec.colors[t % 2];
                break;
            case PatternKind::Zigzag3: {
                // a b c b | a b c b ...
                static constexpr int zig[4] = {0, 1, 2, 1};
                out[t] = spec.colors[zig[t % 4]];
                break;
            }
            case PatternKind::Repeat3:
                out[t] = spec.colors[t % 3];
                break;
        }
    }
    return out;
}

PatternSpec sample_pattern_spec(PatternKind kind, Rng& rng) {
    PatternSpec spec;
    spec.kind = kind;
    switch (kind) {
        case PatternKind::Linear:
            spec.start = rng.uniform_int(0, 6);
            spec.hop = rng.uniform_int(1, 6);
            break;
        case PatternKind::Repeat2: {
            auto c = rng.sample_distinct(kNumColors, 2);
            spec.colors = {c[0], c[1], 0};
            break;
        }
        case PatternKind::Zigzag3:
        case PatternKind::Repeat3: {
            auto c = rng.sample_distinct(kNumColors, 3);
            spec.colors = {c[0], c[1], c[2]};
            break;
        }
    }
    spec.validate();
    return spec;
}

BlinkingBallSpec sample_ball_spec(Rng& rng) {
    BlinkingBallSpec spec;
    auto perm = rng.permutation(4);
    std::copy(perm.begin(), perm.end(), spec.position_pattern.begin());
    int len = rng.uniform_int(1, kNumBallColors);
    auto colors = rng.sample_distinct(kNumBallColors, len);
    spec.color_pattern.assign(colors.begin(), colors.end());
    spec.validate();
    return spec;
}

namespace {

inline void put_pixel(Image& img, int x, int y, Rgb c) {
    size_t off = (static_cast<size_t>(y) * kImageSize + x) * kImageChannels;
    img[off] = c.r;
    img[off + 1] = c.g;
    img[off + 2] = c.b;
}

// Even-odd point-in-polygon test.
bool in_polygon(double px, double py, const std::vector<std::array<double, 2>>& poly) {
    bool inside = false;
    size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        double xi = poly[i][0], yi = poly[i][1];
        double xj = poly[j][0], yj = poly[j][1];
        if ((yi > py) != (yj > py)) {
            double xcross = xj + (py - yj) / (yi - yj) * (xi - xj);
            if (px < xcross) inside = !inside;
        }
    }
    return inside;
}

// Shape membership in local cell coordinates; (px, py) is the pixel center.
bool in_shape(Shape s, double px, double py) {
    const double cx = kCellSize / 2.0, cy = kCellSize / 2.0;
    switch (s) {
        case Shape::Square:
            return px >= 2.0 && px <= 14.0 && py >= 2.0 && py <= 14.0;
        case Shape::Circle: {
            double dx = px - cx, dy = py - cy;
            return dx * dx + dy * dy <= 6.5 * 6.5;
        }
        case Shape::Triangle: {
            if (py < 1.5 || py > 14.5) return false;
            double half = (py - 1.5) * (6.8 / 13.0);
            return std::abs(px - cx) <= half;
        }
        case Shape::Star: {
            static const std::vector<std::array<double, 2>> star = [] {
                std::vector<std::array<double, 2>> v;
                const double cx0 = 8.0, cy0 = 8.0, ro = 7.6, ri = 3.0;
                for (int i = 0; i < 10; ++i) {
                    double ang = -M_PI / 2.0 + i * M_PI / 5.0;
                    double r = (i % 2 == 0) ? ro : ri;
                    v.push_back({cx0 + r * std::cos(ang), cy0 + r * std::sin(ang)});
                }
                return v;
            }();
            return in_polygon(px, py, star);
        }
    }
    return false;
}

}  // namespace

Image render_sprite_frame(const SpriteFrameLabel& label) {
    if (label.color_idx < 0 || label.color_idx >= kNumColors) throw std::invalid_argument("bad color index");
    if (label.cell_row < 0 || label.cell_row >= kGridCells || label.cell_col < 0 || label.cell_col >= kGridCells)
        throw std::invalid_argument("bad grid cell");
    Image img(static_cast<size_t>(kImageSize) * kImageSize * kImageChannels, 0);
    Rgb color = sprite_palette()[label.color_idx];
    int x0 = label.cell_col * kCellSize;
    int y0 = label.cell_row * kCellSize;
    for (int y = 0; y < kCellSize; ++y) {
        for (int x = 0; x < kCellSize; ++x) {
            if (in_shape(label.shape, x + 0.5, y + 0.5)) put_pixel(img, x0 + x, y0 + y, color);
        }
    }
    return img;
}

BallFrameLabel ball_frame_label(const BlinkingBallSpec& spec, int step) {
    if (step < 0) throw std::invalid_argument("step must be >= 0");
    spec.validate();
    return BallFrameLabel{
        spec.position_pattern[step % 4],
        spec.color_pattern[step % spec.color_pattern.size()],
    };
}

namespace {

std::vector<uint8_t> ball_classes_impl(int colored_slot, int color_idx) {
    std::vector<uint8_t> classes(static_cast<size_t>(kImageSize) * kImageSize, 0);
    const auto& centers = ball_centers();
    for (int slot = 0; slot < 4; ++slot) {
        uint8_t cls = (slot == colored_slot) ? static_cast<uint8_t>(2 + color_idx) : 1;
        int cx = centers[slot][0], cy = centers[slot][1];
        for (int y = cy - kBallRadius; y <= cy + kBallRadius; ++y) {
            for (int x = cx - kBallRadius; x <= cx + kBallRadius; ++x) {
                double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= double(kBallRadius) * kBallRadius)
                    classes[static_cast<size_t>(y) * kImageSize + x] = cls;
            }
        }
    }
    return classes;
}

}  // namespace

std::vector<uint8_t> ball_class_map(const BlinkingBallSpec& spec, int step) {
    auto label = ball_frame_label(spec, step);
    return ball_classes_impl(label.ball_slot, label.color_idx);
}

std::vector<uint8_t> ball_class_map_all_white() { return ball_classes_impl(-1, 0); }

Image image_from_ball_classes(const std::vector<uint8_t>& classes) {
    Image img(static_cast<size_t>(kImageSize) * kImageSize * kImageChannels, 0);
    for (int y = 0; y < kImageSize; ++y) {
        for (int x = 0; x < kImageSize; ++x) {
            uint8_t cls = classes[static_cast<size_t>(y) * kImageSize + x];
            Rgb c{0, 0, 0};
            if (cls == 1) c = Rgb{255, 255, 255};
            else if (cls >= 2) c = ball_palette()[cls - 2];
            put_pixel(img, x, y, c);
        }
    }
    return img;
}

Image render_ball_frame(const BlinkingBallSpec& spec, int step) {
    return image_from_ball_classes(ball_class_map(spec, step));
}

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

ImageSequence gen_sequence(Task task, int length, uint64_t seed) {
    if (length < 1) throw std::invalid_argument("length must be >= 1");
    Rng rng(seed);
    ImageSequence seq;
    seq.task = task;
    seq.seed = seed;
    if (task == Task::Sprites) {
        auto kind = static_cast<PatternKind>(rng.uniform_int(0, 3));
        PatternSpec spec = sample_pattern_spec(kind, rng);
        Shape shape = static_cast<Shape>(rng.uniform_int(0, 3));
        int row = rng.uniform_int(0, kGridCells - 1);
        int col = rng.uniform_int(0, kGridCells - 1);
        auto colors = gen_color_sequence(spec, length);
        seq.pattern = spec;
        for (int t = 0; t < length; ++t) {
            SpriteFrameLabel label{colors[t], shape, row, col};
            seq.sprite_labels.push_back(label);
            seq.frames.push_back(render_sprite_frame(label));
        }
    } else {
        BlinkingBallSpec spec = sample_ball_spec(rng);
        seq.ball_spec = spec;
        for (int t = 0; t < length; ++t) seq.frames.push_back(render_ball_frame(spec, t));
    }
    return seq;
}

Dataset gen_dataset(Task task, int count, int length, uint64_t seed) {
    if (count < 1) throw std::invalid_argument("count must be >= 1");
    Dataset ds;
    ds.task = task;
    ds.seed = seed;
    ds.count = count;
    ds.length = length;
    ds.sequences.reserve(count);
    for (int i = 0; i < count; ++i)
        ds.sequences.push_back(gen_sequence(task, length, splitmix64(seed ^ (0xA5A5A5A5ull + static_cast<uint64_t>(i)))));

    std::array<double, 3> sum = {0, 0, 0}, sumsq = {0, 0, 0};
    size_t n_per_channel = 0;
    for (const auto& seq : ds.sequences) {
        for (const auto& frame : seq.frames) {
            for (size_t i = 0; i < frame.size(); i += 3) {
                for (int c = 0; c < 3; ++c) {
                    double v = frame[i + c] / 255.0;
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
            n_per_channel += frame.size() / 3;
        }
    }
    for (int c = 0; c < 3; ++c) {
        double mean = sum[c] / static_cast<double>(n_per_channel);
        double var = sumsq[c] / static_cast<double>(n_per_channel) - mean * mean;
        ds.channel_mean[c] = mean;
        ds.channel_std[c] = std::sqrt(std::max(var, 1e-8));
    }
    return ds;
}

namespace {

json pattern_to_json(const PatternSpec& p) {
    json j;
    j["kind"] = to_string(p.kind);
    j["start"] = p.start;
    j["hop"] = p.hop;
    j["colors"] = p.colors;
    return j;
}

PatternSpec pattern_from_json(const json& j) {
    PatternSpec p;
    p.kind = pattern_kind_from_string(j.at("kind").get<std::string>());
    p.start = j.at("start").get<int>();
    p.hop = j.at("hop").get<int>();
    p.colors = j.at("colors").get<std::array<int, 3>>();
    return p;
}

std::string frames_filename(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frames_%04d.bin", idx);
    return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "djepa-dataset-v1";
    manifest["task"] = to_string(ds.task);
    manifest["seed"] = ds.seed;
    manifest["count"] = ds.count;
    manifest["length"] = ds.length;
    manifest["image_size"] = kImageSize;
    manifest["channels"] = kImageChannels;
    manifest["channel_mean"] = ds.channel_mean;
    manifest["channel_std"] = ds.channel_std;
    json palette = json::array();
    for (const auto& c : sprite_palette()) palette.push_back({c.r, c.g, c.b});
    manifest["palette"] = palette;

    json seqs = json::array();
    for (size_t i = 0; i < ds.sequences.size(); ++i) {
        const auto& seq = ds.sequences[i];
        json js;
        js["seed"] = seq.seed;
        js["length"] = seq.length();
        js["frames_file"] = frames_filename(static_cast<int>(i));
        size_t bytes = 0;
        std::vector<uint8_t> blob;
        for (const auto& f : seq.frames) bytes += f.size();
        blob.reserve(bytes);
        for (const auto& f : seq.frames) blob.insert(blob.end(), f.begin(), f.end());
        js["frames_bytes"] = blob.size();
        js["frames_fnv1a"] = fnv1a(blob.data(), blob.size());
        write_binary_file_atomic(dir / frames_filename(static_cast<int>(i)), blob.data(), blob.size());

        if (seq.task == Task::Sprites) {
            js["pattern"] = pattern_to_json(*seq.pattern);
            json labels = json::array();
            for (const auto& l : seq.sprite_labels)
                labels.push_back({{"color", l.color_idx},
                                  {"shape", static_cast<int>(l.shape)},
                                  {"row", l.cell_row},
                                  {"col", l.cell_col}});
            js["labels"] = labels;
        } else {
            json spec;
            spec["position_pattern"] = seq.ball_spec->position_pattern;
            spec["color_pattern"] = seq.ball_spec->color_pattern;
            js["ball_spec"] = spec;
        }
        seqs.push_back(std::move(js));
    }
    manifest["sequences"] = std::move(seqs);
    write_text_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw std::runtime_error("dataset manifest missing: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt dataset manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "djepa-dataset-v1")
        throw std::runtime_error("unrecognized dataset format in " + manifest_path.string());

    Dataset ds;
    ds.task = task_from_string(manifest.at("task").get<std::string>());
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.count = manifest.at("count").get<int>();
    ds.length = manifest.at("length").get<int>();
    ds.channel_mean = manifest.at("channel_mean").get<std::array<double, 3>>();
    ds.channel_std = manifest.at("channel_std").get<std::array<double, 3>>();

    const size_t frame_bytes = static_cast<size_t>(kImageSize) * kImageSize * kImageChannels;
    for (const auto& js : manifest.at("sequences")) {
        ImageSequence seq;
        seq.task = ds.task;
        seq.seed = js.at("seed").get<uint64_t>();
        int length = js.at("length").get<int>();
        auto frames_path = dir / js.at("frames_file").get<std::string>();
        auto blob = read_binary_file(frames_path);
        if (blob.size() != js.at("frames_bytes").get<size_t>() ||
            blob.size() != frame_bytes * static_cast<size_t>(length) ||
            fnv1a(blob.data(), blob.size()) != js.at("frames_fnv1a").get<uint64_t>())
            throw std::runtime_error("corrupt frame file: " + frames_path.string());
        for (int t = 0; t < length; ++t)
            seq.frames.emplace_back(blob.begin() + static_cast<long>(t * frame_bytes),
                                    blob.begin() + static_cast<long>((t + 1) * frame_bytes));
        if (ds.task == Task::Sprites) {
            seq.pattern = pattern_from_json(js.at("pattern"));
            for (const auto& jl : js.at("labels")) {
                SpriteFrameLabel l;
                l.color_idx = jl.at("color").get<int>();
                l.shape = static_cast<Shape>(jl.at("shape").get<int>());
                l.cell_row = jl.at("row").get<int>();
                l.cell_col = jl.at("col").get<int>();
                seq.sprite_labels.push_back(l);
            }
        } else {
            BlinkingBallSpec spec;
            spec.position_pattern = js.at("ball_spec").at("position_pattern").get<std::array<int, 4>>();
            spec.color_pattern = js.at("ball_spec").at("color_pattern").get<std::vector<int>>();
            spec.validate();
            seq.ball_spec = spec;
        }
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

}  // namespace djepa
