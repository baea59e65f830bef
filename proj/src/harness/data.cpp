#include "xbr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "xbr/error.hpp"

namespace xbr::data {

Tensor<float> Dataset::images(std::span<const std::size_t> indices) const {
    Tensor<float> out({indices.size(), kChannels, kSide, kSide});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= size()) throw ShapeError("dataset: index out of range");
        const std::uint8_t* src = pixels.data() + indices[k] * kImageBytes;
        std::transform(src, src + kImageBytes, out.data() + k * kImageBytes,
                       [](std::uint8_t v) { return static_cast<float>(v); });
    }
    return out;
}

Tensor<float> Dataset::images(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return images(idx);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels.at(indices[k]);
    return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw ShapeError("dataset: slice out of range");
    Dataset d;
    d.name = name;
    d.classes = classes;
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
    d.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(begin * kImageBytes),
                    pixels.begin() + static_cast<std::ptrdiff_t>(end * kImageBytes));
    return d;
}

Dataset Dataset::sample(std::size_t count, std::uint64_t seed) const {
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(count, idx.size()));
    Dataset d;
    d.name = name;
    d.classes = classes;
    d.labels = labels_of(idx);
    d.pixels.resize(idx.size() * kImageBytes);
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(idx[k] * kImageBytes), kImageBytes,
                    d.pixels.begin() + static_cast<std::ptrdiff_t>(k * kImageBytes));
    return d;
}

void Dataset::validate() const {
    if (pixels.size() != labels.size() * kImageBytes)
        throw IngestionError("dataset " + name + ": " + std::to_string(pixels.size()) + " pixel bytes for " +
                             std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw IngestionError("dataset " + name + ": label " + std::to_string(labels[i]) + " of record " +
                                 std::to_string(i) + " outside [0," + std::to_string(classes) + ")");
}

std::size_t cifar_record_bytes(CifarKind kind) { return (kind == CifarKind::cifar10 ? 1 : 2) + kImageBytes; }

Dataset load_cifar(const std::filesystem::path& file, CifarKind kind) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IngestionError("cifar: cannot open " + file.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::size_t rec = cifar_record_bytes(kind);
    if (bytes.size() % rec != 0) {
        const std::size_t complete = bytes.size() / rec;
        throw IngestionError("cifar: " + file.string() + " ends with a truncated record at byte offset " +
                             std::to_string(complete * rec) + " (file size " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(rec) + ")");
    }
    Dataset d;
    d.name = file.filename().string();
    d.classes = kind == CifarKind::cifar10 ? 10 : 100;
    const std::size_t n = bytes.size() / rec;
    d.labels.resize(n);
    d.pixels.resize(n * kImageBytes);
    const std::size_t label_bytes = rec - kImageBytes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* r = bytes.data() + i * rec;
        d.labels[i] = r[label_bytes - 1];
        if (static_cast<std::size_t>(d.labels[i]) >= d.classes)
            throw IngestionError("cifar: label " + std::to_string(d.labels[i]) + " out of range at byte offset " +
                                 std::to_string(i * rec + label_bytes - 1) + " in " + file.string());
        std::copy_n(r + label_bytes, kImageBytes, d.pixels.begin() + static_cast<std::ptrdiff_t>(i * kImageBytes));
    }
    return d;
}

void write_cifar(const std::filesystem::path& file, const Dataset& d, CifarKind kind) {
    d.validate();
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw IngestionError("cifar: cannot open " + file.string() + " for writing");
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto label = static_cast<char>(d.labels[i]);
        if (kind == CifarKind::cifar100) os.put(0);  // coarse label is not tracked
        os.put(label);
        os.write(reinterpret_cast<const char*>(d.pixels.data() + i * kImageBytes), kImageBytes);
    }
    if (!os) throw IngestionError("cifar: write failed for " + file.string());
}

Dataset load_cifar_split(const std::filesystem::path& dir, CifarKind kind, bool train) {
    std::vector<std::filesystem::path> files;
    if (kind == CifarKind::cifar10) {
        if (train)
            for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        else
            files.push_back(dir / "test_batch.bin");
    } else {
        files.push_back(dir / (train ? "train.bin" : "test.bin"));
    }
    Dataset all;
    for (const auto& f : files) {
        auto part = load_cifar(f, kind);
        all.classes = part.classes;
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
        all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    }
    all.name = std::string(kind == CifarKind::cifar10 ? "cifar10" : "cifar100") + (train ? "-train" : "-test");
    return all;
}

namespace {

// Bilinear upsampling of a (3, g, g) grid to (3, 32, 32), normalized to unit std.
std::vector<double> smooth_field(std::size_t grid, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> coarse(kChannels * grid * grid);
    for (auto& v : coarse) v = n(rng);
    std::vector<double> f(kImageBytes);
    const double scale = static_cast<double>(grid - 1) / static_cast<double>(kSide - 1);
    for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t y = 0; y < kSide; ++y)
            for (std::size_t x = 0; x < kSide; ++x) {
                const double gy = static_cast<double>(y) * scale, gx = static_cast<double>(x) * scale;
                const auto y0 = static_cast<std::size_t>(gy), x0 = static_cast<std::size_t>(gx);
                const std::size_t y1 = std::min(y0 + 1, grid - 1), x1 = std::min(x0 + 1, grid - 1);
                const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
                auto at = [&](std::size_t yy, std::size_t xx) { return coarse[(c * grid + yy) * grid + xx]; };
                f[(c * kSide + y) * kSide + x] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                                  fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
            }
    double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
    double var = 0.0;
    for (auto& v : f) {
        v -= mean;
        var += v * v;
    }
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(f.size()) + 1e-12);
    for (auto& v : f) v *= inv;
    return f;
}

}  // namespace

Dataset make_synthetic(std::size_t classes, std::size_t count, std::uint64_t seed, const SyntheticOptions& o) {
    if (classes == 0) throw ConfigError("synthetic dataset needs at least one class");
    Dataset d;
    d.name = "synthetic";
    d.classes = classes;
    if (count == 0) return d;
    std::mt19937_64 prng(o.pattern_seed);
    std::vector<std::vector<double>> patterns;
    for (std::size_t c = 0; c < classes; ++c) {
        auto coarse = smooth_field(4, prng);
        auto fine = smooth_field(8, prng);
        for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = (coarse[i] + 0.5 * fine[i]) / std::sqrt(1.25);
        // Mirror symmetric, so horizontal flips keep the label as they do for natural images.
        std::vector<double> p(coarse.size());
        double power = 0.0;
        for (std::size_t r = 0; r < kChannels * kSide; ++r)
            for (std::size_t x = 0; x < kSide; ++x) {
                p[r * kSide + x] = coarse[r * kSide + x] + coarse[r * kSide + kSide - 1 - x];
                power += p[r * kSide + x] * p[r * kSide + x];
            }
        const double inv = 1.0 / std::sqrt(power / static_cast<double>(p.size()) + 1e-12);
        for (auto& v : p) v *= inv;
        patterns.push_back(std::move(p));
    }
    std::mt19937_64 rng(seed);
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % classes);
    std::shuffle(labels.begin(), labels.end(), rng);
    d.labels = labels;
    d.pixels.resize(count * kImageBytes);
    std::uniform_int_distribution<int> shift(-static_cast<int>(o.max_shift), static_cast<int>(o.max_shift));
    std::uniform_real_distribution<double> contrast(0.7, 1.3);
    std::normal_distribution<double> white(0.0, o.pixel_noise);
    constexpr double kAmplitude = 40.0;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& p = patterns[static_cast<std::size_t>(labels[i])];
        const int dy = shift(rng), dx = shift(rng);
        const double a = contrast(rng) * o.margin;
        const auto nuisance = smooth_field(4, rng);
        std::uint8_t* out = d.pixels.data() + i * kImageBytes;
        for (std::size_t c = 0; c < kChannels; ++c)
            for (std::size_t y = 0; y < kSide; ++y)
                for (std::size_t x = 0; x < kSide; ++x) {
                    const auto sy = static_cast<std::size_t>(std::clamp<int>(static_cast<int>(y) + dy, 0, kSide - 1));
                    const auto sx = static_cast<std::size_t>(std::clamp<int>(static_cast<int>(x) + dx, 0, kSide - 1));
                    const std::size_t k = (c * kSide + y) * kSide + x;
                    const double v = 127.5 + kAmplitude * (a * p[(c * kSide + sy) * kSide + sx] + o.nuisance * nuisance[k]) +
                                     white(rng);
                    out[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
                }
    }
    return d;
}

}  // namespace xbr::data
