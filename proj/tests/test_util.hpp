#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "mpseg/volume.hpp"

namespace testutil {

/// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<std::uint64_t> counter{0};
        std::random_device rd;
        const auto tag = std::to_string(rd()) + "_" + std::to_string(counter++);
        path = std::filesystem::temp_directory_path() / ("mpseg_test_" + tag);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    operator const std::filesystem::path&() const { return path; }
};

inline mpseg::FloatVolume random_float_volume(std::mt19937_64& gen,
                                              std::array<std::int64_t, 3> dims,
                                              std::array<double, 3> spacing = {1, 1, 1}) {
    mpseg::FloatVolume v(dims, spacing);
    std::uniform_real_distribution<float> dist(-10.0f, 10.0f);
    for (auto& x : v.data) x = dist(gen);
    return v;
}

inline mpseg::ByteVolume random_label_volume(std::mt19937_64& gen,
                                             std::array<std::int64_t, 3> dims) {
    mpseg::ByteVolume v(dims);
    constexpr std::uint8_t alphabet[4] = {0, 1, 2, 4};
    for (auto& x : v.data) x = alphabet[gen() % 4];
    return v;
}

} // namespace testutil
