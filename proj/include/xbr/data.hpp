#pragma once

// 32x32 RGB image datasets: CIFAR binary files and a synthetic class-cluster generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xbr/tensor.hpp"

namespace xbr::data {

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kSide = 32;
inline constexpr std::size_t kImageBytes = kChannels * kSide * kSide;  // channel-planar R, G, B

struct Dataset {
    std::string name;
    std::size_t classes = 10;
    std::vector<std::uint8_t> pixels;  // size() * kImageBytes
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }

    // (n, 3, 32, 32) float pixels on [0, 255].
    Tensor<float> images(std::span<const std::size_t> indices) const;
    Tensor<float> images(std::size_t begin, std::size_t end) const;
    std::vector<int> labels_of(std::span<const std::size_t> indices) const;

    Dataset slice(std::size_t begin, std::size_t end) const;
    // First `count` records of a seeded permutation.
    Dataset sample(std::size_t count, std::uint64_t seed) const;

    // Throws IngestionError on out-of-range labels or inconsistent sizes.
    void validate() const;
};

enum class CifarKind { cifar10, cifar100 };

std::size_t cifar_record_bytes(CifarKind kind);

// One binary batch file: per record 1 label byte (CIFAR-10) or coarse+fine label bytes
// (CIFAR-100, fine label kept), then 3072 pixel bytes.
Dataset load_cifar(const std::filesystem::path& file, CifarKind kind);
void write_cifar(const std::filesystem::path& file, const Dataset& d, CifarKind kind);

// Standard distribution layout: data_batch_1..5.bin / test_batch.bin (CIFAR-10) or
// train.bin / test.bin (CIFAR-100).
Dataset load_cifar_split(const std::filesystem::path& dir, CifarKind kind, bool train);

struct SyntheticOptions {
    double margin = 1.0;        // class-pattern amplitude relative to the nuisance field
    double nuisance = 1.0;      // per-sample smooth nuisance amplitude
    double pixel_noise = 8.0;   // white noise std, pixel units
    std::size_t max_shift = 2;  // random translation of the class pattern, pixels
    std::uint64_t pattern_seed = 0;  // class patterns; shared by every split
};

// Class-specific smooth colour patterns (left-right symmetric) plus per-sample translation,
// contrast jitter, a smooth nuisance field and pixel noise, rendered to [0, 255]. Labels are
// balanced (i mod classes) and then shuffled.
Dataset make_synthetic(std::size_t classes, std::size_t count, std::uint64_t seed,
                       const SyntheticOptions& options = {});

}  // namespace xbr::data
