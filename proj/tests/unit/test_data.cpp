#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "xbr/data.hpp"
#include "xbr/error.hpp"

using namespace xbr;
using namespace xbr::data;

namespace {

std::filesystem::path tmp_dir() {
    const char* env = std::getenv("XBR_TEST_TMP");
    auto p = std::filesystem::path(env ? env : "/tmp/xbr_test") / "data";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("CIFAR-10 batch size and round trip") {
    const auto d = make_synthetic(10, 10000, 1);
    const auto path = tmp_dir() / "batch.bin";
    write_cifar(path, d, CifarKind::cifar10);
    CHECK(std::filesystem::file_size(path) == 30730000);
    const auto back = load_cifar(path, CifarKind::cifar10);
    CHECK(back.labels == d.labels);
    CHECK(back.pixels == d.pixels);
    CHECK(back.classes == 10);
}

TEST_CASE("CIFAR-100 keeps the fine label") {
    auto d = make_synthetic(100, 300, 2);
    d.classes = 100;
    const auto path = tmp_dir() / "c100.bin";
    write_cifar(path, d, CifarKind::cifar100);
    CHECK(std::filesystem::file_size(path) == 300 * 3074);
    const auto back = load_cifar(path, CifarKind::cifar100);
    CHECK(back.labels == d.labels);
    CHECK(back.pixels == d.pixels);
}

TEST_CASE("all-zero record") {
    const auto path = tmp_dir() / "zero.bin";
    {
        std::ofstream out(path, std::ios::binary);
        const std::string rec(3073, '\0');
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
    const auto d = load_cifar(path, CifarKind::cifar10);
    REQUIRE(d.size() == 1);
    CHECK(d.labels[0] == 0);
    for (auto p : d.pixels) CHECK(p == 0);
}

TEST_CASE("malformed CIFAR files report the byte offset") {
    const auto d = make_synthetic(10, 3, 1);
    const auto path = tmp_dir() / "trunc.bin";
    write_cifar(path, d, CifarKind::cifar10);
    std::filesystem::resize_file(path, 2 * 3073 + 100);
    try {
        load_cifar(path, CifarKind::cifar10);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("6146") != std::string::npos);
    }
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3073);
        f.put(static_cast<char>(42));
    }
    std::filesystem::resize_file(path, 2 * 3073);
    try {
        load_cifar(path, CifarKind::cifar10);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("3073") != std::string::npos);
    }
    CHECK_THROWS_AS(load_cifar(tmp_dir() / "missing.bin", CifarKind::cifar10), IngestionError);
}

TEST_CASE("synthetic datasets") {
    CHECK(make_synthetic(10, 0, 1).empty());
    const auto a = make_synthetic(10, 200, 5), b = make_synthetic(10, 200, 5), c = make_synthetic(10, 200, 6);
    CHECK(a.pixels == b.pixels);
    CHECK(a.labels == b.labels);
    CHECK(a.pixels != c.pixels);
    std::vector<int> counts(10, 0);
    for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
    for (int n : counts) CHECK(n == 20);
    a.validate();
    const auto x = a.images(0, 2);
    CHECK(x.shape() == Shape{2, 3, 32, 32});
    CHECK(a.sample(50, 1).size() == 50);
    CHECK(a.sample(50, 1).labels == a.sample(50, 1).labels);
}

TEST_CASE("two well-separated synthetic classes are linearly separable") {
    SyntheticOptions o;
    o.margin = 3.0;
    const auto all = make_synthetic(2, 600, 3, o);
    const auto train = all.slice(0, 400), test = all.slice(400, 600);
    const std::size_t d = kImageBytes;
    // logistic regression on centred pixels, plain gradient descent
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    auto feature = [&](const Dataset& s, std::size_t i, std::size_t k) { return (s.pixels[i * d + k] - 127.5) / 64.0; };
    for (int it = 0; it < 100; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            double z = b;
            for (std::size_t k = 0; k < d; ++k) z += w[k] * feature(train, i, k);
            const double r = 1.0 / (1.0 + std::exp(-z)) - train.labels[i];
            for (std::size_t k = 0; k < d; ++k) gw[k] += r * feature(train, i, k);
            gb += r;
        }
        for (std::size_t k = 0; k < d; ++k) w[k] -= 1e-3 * gw[k];
        b -= 1e-3 * gb;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        double z = b;
        for (std::size_t k = 0; k < d; ++k) z += w[k] * feature(test, i, k);
        correct += (z > 0) == (test.labels[i] == 1);
    }
    CHECK(100.0 * static_cast<double>(correct) / static_cast<double>(test.size()) > 95.0);
}
