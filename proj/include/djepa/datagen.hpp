#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "djepa/common.hpp"

namespace djepa {

inline constexpr int kImageSize = 64;
inline constexpr int kImageChannels = 3;
inline constexpr int kNumColors = 7;
inline constexpr int kGridCells = 4;   // 4x4 grid of candidate sprite positions
inline constexpr int kCellSize = kImageSize / kGridCells;
inline constexpr int kNumBallColors = 5;
inline constexpr int kBallRadius = 7;

// H*W*C uint8 image, row-major, RGB interleaved.
using Image = std::vector<uint8_t>;

enum class PatternKind { Linear, Repeat2, Zigzag3, Repeat3 };
enum class Shape { Star, Square, Circle, Triangle };
enum class Task { Sprites, Balls };

std::string to_string(PatternKind k);
PatternKind pattern_kind_from_string(const std::string& s);
std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct PatternSpec {
    PatternKind kind = PatternKind::Linear;
    int start = 0;                      // Linear
    int hop = 1;                        // Linear, in [1,6]
    std::array<int, 3> colors = {0, 1, 2};  // Repeat2 uses [0..1], Zigzag3/Repeat3 use all three

    void validate() const;
};

struct SpriteFrameLabel {
    int color_idx = 0;   // [0,6]
    Shape shape = Shape::Circle;
    int cell_row = 0;    // [0,3]
    int cell_col = 0;
};

struct BlinkingBallSpec {
    std::array<int, 4> position_pattern = {0, 1, 2, 3};  // permutation of ball slots
    std::vector<int> color_pattern = {0};                // distinct entries in [0,4], length 1..5

    void validate() const;
};

// Fixed ball centers (x, y), slot order 0..3.
const std::array<std::array<int, 2>, 4>& ball_centers();

struct ImageSequence {
    Task task = Task::Sprites;
    uint64_t seed = 0;
    std::vector<Image> frames;
    // Sprites
    std::optional<PatternSpec> pattern;
    std::vector<SpriteFrameLabel> sprite_labels;
    // Balls
    std::optional<BlinkingBallSpec> ball_spec;

    int length() const { return static_cast<int>(frames.size()); }
};

struct Dataset {
    Task task = Task::Sprites;
    uint64_t seed = 0;
    int count = 0;
    int length = 0;
    std::array<double, 3> channel_mean = {0, 0, 0};  // over [0,1]-scaled pixels
    std::array<double, 3> channel_std = {1, 1, 1};
    std::vector<ImageSequence> sequences;
};

// Color sequence for the four pattern families.
std::vector<int> gen_color_sequence(const PatternSpec& spec, int length);

// Uniform draw over the admissible parameters of one pattern family.
PatternSpec sample_pattern_spec(PatternKind kind, Rng& rng);
BlinkingBallSpec sample_ball_spec(Rng& rng);

Image render_sprite_frame(const SpriteFrameLabel& label);

// Per-pixel class map for a ball frame: 0 background, 1 white, 2..6 colors.
std::vector<uint8_t> ball_class_map(const BlinkingBallSpec& spec, int step);
std::vector<uint8_t> ball_class_map_all_white();
Image render_ball_frame(const BlinkingBallSpec& spec, int step);
Image image_from_ball_classes(const std::vector<uint8_t>& classes);

// Symbolic labels of a ball frame at a given step.
struct BallFrameLabel {
    int ball_slot;   // which of the four positions is colored
    int color_idx;   // [0,4]
};
BallFrameLabel ball_frame_label(const BlinkingBallSpec& spec, int step);

ImageSequence gen_sequence(Task task, int length, uint64_t seed);
Dataset gen_dataset(Task task, int count, int length, uint64_t seed);

// Directory layout: manifest.json + frames_%04d.bin (raw T*H*W*C uint8).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace djepa
