#include "djepa/common.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace djepa {

namespace {

// glibc grows its mmap threshold adaptively, so loops that allocate varying
// multi-megabyte tensors interleaved with small long-lived ones can pin freed
// blocks on the heap and grow RSS without bound. Pinning the threshold keeps
// large tensor blocks on mmap so they return to the OS when freed.
[[maybe_unused]] const bool malloc_configured = [] {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 128 * 1024);
#endif
    return true;
}();

}  // namespace

std::vector<int> Rng::sample_distinct(int n, int k) {
    if (k > n) throw std::invalid_argument("sample_distinct: k > n");
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
        int j = uniform_int(i, n - 1);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

std::vector<int> Rng::permutation(int n) { return sample_distinct(n, n); }

const std::array<Rgb, 7>& sprite_palette() {
    static const std::array<Rgb, 7> p = {{
        {230, 25, 25},    // 0 red
        {255, 146, 0},    // 1 orange
        {255, 221, 0},    // 2 yellow
        {26, 188, 60},    // 3 green
        {0, 174, 219},    // 4 cyan
        {46, 64, 229},    // 5 blue
        {214, 36, 214},   // 6 magenta
    }};
    return p;
}

const std::array<Rgb, 5>& ball_palette() {
    static const std::array<Rgb, 5> p = {{
        {230, 25, 25},    // red
        {255, 221, 0},    // yellow
        {26, 188, 60},    // green
        {46, 64, 229},    // blue
        {214, 36, 214},   // magenta
    }};
    return p;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), columns_(header.size()) {
    std::error_code ec;
    bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_, ec) == 0;
    if (fresh) {
        std::ofstream out(path_);
        if (!out) throw std::runtime_error("CsvWriter: cannot open " + path_.string());
        for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
        out << "\n";
    }
}

void CsvWriter::append(const std::vector<std::string>& row) {
    if (row.size() != columns_) throw std::invalid_argument("CsvWriter: column count mismatch");
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("CsvWriter: cannot open " + path_.string());
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text_file_atomic(const std::filesystem::path& path, const std::string& content) {
    write_binary_file_atomic(path, content.data(), content.size());
}

void write_binary_file_atomic(const std::filesystem::path& path, const void* data, size_t bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<uint8_t> read_binary_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

uint64_t fnv1a(const void* data, size_t bytes) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t hash_file(const std::filesystem::path& path) {
    auto bytes = read_binary_file(path);
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace djepa
