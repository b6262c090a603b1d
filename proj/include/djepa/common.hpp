#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace djepa {

// Seeded RNG used for all data-side sampling. Model-side randomness goes
// through torch::manual_seed so the two streams stay independent.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen_);
    }

    double uniform() {
        std::uniform_real_distribution<double> d(0.0, 1.0);
        return d(gen_);
    }

    // k distinct values from [0, n), order randomized.
    std::vector<int> sample_distinct(int n, int k);

    // Random permutation of [0, n).
    std::vector<int> permutation(int n);

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
};

struct Rgb {
    uint8_t r, g, b;
    bool operator==(const Rgb&) const = default;
};

// Fixed 7-color sprite palette, indices 0..6. Documented in the README.
const std::array<Rgb, 7>& sprite_palette();
// 5 non-white ball colors (a subset of the sprite palette hues).
const std::array<Rgb, 5>& ball_palette();
// Pixel classes for the ball decoder: 0 background, 1 white, 2..6 ball colors.
inline constexpr int kBallPixelClasses = 7;

// Minimal CSV writer: append rows to a file, writing the header iff the file
// is new/empty.
class CsvWriter {
  public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    void append(const std::vector<std::string>& row);
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
    size_t columns_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file_atomic(const std::filesystem::path& path, const std::string& content);
void write_binary_file_atomic(const std::filesystem::path& path, const void* data, size_t bytes);
std::vector<uint8_t> read_binary_file(const std::filesystem::path& path);

// FNV-1a over a byte range; used for content-identity checks.
uint64_t fnv1a(const void* data, size_t bytes);
uint64_t hash_file(const std::filesystem::path& path);

}  // namespace djepa
