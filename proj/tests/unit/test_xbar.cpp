#include <doctest.h>

#include <cmath>
#include <random>

#include "xbr/error.hpp"
#include "xbr/xbar.hpp"
#include "../common/oracles.hpp"

using namespace xbr;
using namespace xbr::xbar;

namespace {

ConductanceMatrix random_g(std::size_t n, std::size_t m, const CrossbarConfig& c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(c.g_min(), c.g_max());
    ConductanceMatrix g(n, m);
    for (auto& x : g.values()) x = d(rng);
    return g;
}

std::vector<double> random_v(std::size_t n, double vmax, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(0.0, vmax);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

struct ScaledIdeal final : CrossbarModel {
    double factor;
    explicit ScaledIdeal(double f) : factor(f) {}
    std::vector<double> mvm(std::span<const double> v, const ConductanceMatrix& g) const override {
        auto i = ideal_mvm(v, g);
        for (auto& x : i) x *= factor;
        return i;
    }
    std::string name() const override { return "scaled"; }
};

}  // namespace

TEST_CASE("level map endpoints and interior") {
    CrossbarConfig c;
    const std::vector<std::uint16_t> levels{0, 15, 7};
    const auto g = program(levels, 1, 3, 4, c);
    CHECK(g(0, 0) == doctest::Approx(c.g_min()).epsilon(1e-15));
    CHECK(g(0, 1) == doctest::Approx(10e-6).epsilon(1e-15));
    CHECK(g(0, 2) == doctest::Approx(c.g_min() + 7.0 / 15.0 * (c.g_max() - c.g_min())).epsilon(1e-15));
    // cells outside the plane stay at G_min
    CHECK(g(5, 5) == doctest::Approx(c.g_min()));
}

TEST_CASE("program rejects planes larger than the crossbar") {
    CrossbarConfig c;
    c.rows = c.cols = 2;
    const std::vector<std::uint16_t> levels(9, 1);
    CHECK_THROWS_AS(program(levels, 3, 3, 4, c), MappingError);
}

TEST_CASE("ideal_mvm") {
    ConductanceMatrix one(1, 1, 10e-6);
    CHECK(ideal_mvm(std::vector<double>{1.0}, one)[0] == doctest::Approx(10e-6));
    CHECK(ideal_mvm(std::vector<double>{0.0}, one)[0] == 0.0);

    std::mt19937_64 rng(3);
    CrossbarConfig c;
    const auto g = random_g(4, 4, c, rng);
    const auto v = random_v(4, 0.25, rng);
    const auto i = ideal_mvm(v, g);
    for (std::size_t j = 0; j < 4; ++j) {
        long double ref = 0;
        for (std::size_t r = 0; r < 4; ++r) ref += static_cast<long double>(v[r]) * g(r, j);
        CHECK(std::abs(i[j] - static_cast<double>(ref)) <= 1e-12 * std::abs(static_cast<double>(ref)));
    }
}

TEST_CASE("nodal solver reduces to the ideal product without parasitics") {
    std::mt19937_64 rng(5);
    CrossbarConfig c;
    for (std::size_t n : {1, 3, 16, 64}) {
        c.rows = c.cols = n;
        const auto g = random_g(n, n, c, rng);
        const auto v = random_v(n, c.v_max, rng);
        CHECK(rel_err(nonideal_mvm_nodal(v, g, c), ideal_mvm(v, g)) < 1e-9);
    }
}

TEST_CASE("1x1 series resistance by hand") {
    CrossbarConfig c;
    c.rows = c.cols = 1;
    c.r_source = c.r_sink = 1e3;
    ConductanceMatrix g(1, 1, 1.0 / 100e3);
    const auto r = solve_nodal(std::vector<double>{1.0}, g, c);
    CHECK(r.column_currents[0] == doctest::Approx(1.0 / 102e3).epsilon(1e-10));
    CHECK(r.source_currents[0] == doctest::Approx(1.0 / 102e3).epsilon(1e-10));
    CHECK(r.sink_currents[0] == doctest::Approx(1.0 / 102e3).epsilon(1e-10));
}

TEST_CASE("2x2 and 3x4 with wire resistance match a dense oracle") {
    std::mt19937_64 rng(9);
    CrossbarConfig c;
    c.r_source = 500;
    c.r_sink = 300;
    c.r_wire = 20;
    for (auto [n, m] : {std::pair<std::size_t, std::size_t>{2, 2}, {3, 4}, {5, 2}}) {
        c.rows = n;
        c.cols = m;
        const auto g = random_g(n, m, c, rng);
        const auto v = random_v(n, c.v_max, rng);
        CHECK(rel_err(nonideal_mvm_nodal(v, g, c), oracle::dense_crossbar(v, g, c.r_source, c.r_sink, c.r_wire)) < 1e-8);
    }
}

TEST_CASE("transfer matrix reproduces the nodal solve") {
    std::mt19937_64 rng(13);
    auto c = calibrated_config(32);
    c.rows = c.cols = 8;
    const auto g = random_g(8, 8, c, rng);
    const auto t = nodal_transfer_matrix(g, c);
    const auto v = random_v(8, c.v_max, rng);
    CHECK(rel_err(ideal_mvm(v, t), nonideal_mvm_nodal(v, g, c)) < 1e-10);
}

TEST_CASE("parasitics only reduce column currents") {
    std::mt19937_64 rng(17);
    auto c = calibrated_config(16);
    const auto g = random_g(16, 16, c, rng);
    const auto v = random_v(16, c.v_max, rng);
    const auto ni = nonideal_mvm_nodal(v, g, c);
    const auto id = ideal_mvm(v, g);
    for (std::size_t j = 0; j < 16; ++j) {
        CHECK(ni[j] < id[j]);
        CHECK(ni[j] > 0.0);
    }
}

TEST_CASE("zero drive gives zero current, also for the sinh law") {
    auto c = calibrated_config(8);
    std::mt19937_64 rng(1);
    const auto g = random_g(8, 8, c, rng);
    for (auto x : nonideal_mvm_nodal(std::vector<double>(8, 0.0), g, c)) CHECK(x == 0.0);
    c.device = DeviceLaw::sinh;
    for (auto x : nonideal_mvm_nodal(std::vector<double>(8, 0.0), g, c)) CHECK(std::abs(x) < 1e-18);
}

TEST_CASE("sinh law approaches the linear law for small drive") {
    CrossbarConfig c;
    c.rows = c.cols = 4;
    c.r_source = c.r_sink = 100;
    c.r_wire = 2;
    std::mt19937_64 rng(21);
    const auto g = random_g(4, 4, c, rng);
    const auto v = random_v(4, 1e-3, rng);
    auto lin = nonideal_mvm_nodal(v, g, c);
    c.device = DeviceLaw::sinh;
    c.device_v0 = 0.25;
    CHECK(rel_err(nonideal_mvm_nodal(v, g, c), lin) < 1e-4);
    // at full scale the sinh device conducts more than the linear one
    const auto vf = std::vector<double>(4, 0.25);
    auto sinh_i = nonideal_mvm_nodal(vf, g, c);
    c.device = DeviceLaw::linear;
    auto lin_i = nonideal_mvm_nodal(vf, g, c);
    for (std::size_t j = 0; j < 4; ++j) CHECK(sinh_i[j] > lin_i[j]);
}

TEST_CASE("non-finite drive is rejected") {
    CrossbarConfig c;
    c.rows = c.cols = 1;
    ConductanceMatrix g(1, 1, 1e-5);
    CHECK_THROWS_AS(solve_nodal(std::vector<double>{std::nan("")}, g, c), NumericalError);
}

TEST_CASE("crossbar config validation") {
    CrossbarConfig c;
    c.rows = 0;
    c.r_ratio = 0.5;
    c.r_wire = -1;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("rows") != std::string::npos);
        CHECK(msg.find("r_ratio") != std::string::npos);
        CHECK(msg.find("r_wire") != std::string::npos);
    }
}

TEST_CASE("NF of known transfer functions") {
    CrossbarConfig c;
    c.rows = c.cols = 8;
    CHECK(compute_nf(IdealModel{}, c, 4, 1).nf == 0.0);
    CHECK(compute_nf(ScaledIdeal(1.0 / 1.02), c, 4, 1).nf == doctest::Approx(1.0 - 1.0 / 1.02).epsilon(1e-12));
    CHECK(1.0 - 1.0 / 1.02 == doctest::Approx(0.0196).epsilon(0.01));

    // 1x1 with 1k source and sink: each sample deviates by 2k*G/(1+2k*G), bounded by the
    // values at G_min and G_max
    CrossbarConfig s;
    s.rows = s.cols = 1;
    s.r_source = s.r_sink = 1e3;
    const double nf = compute_nf(NodalModel(s), s, 200, 3).nf;
    CHECK(nf > 2e3 * s.g_min() / (1 + 2e3 * s.g_min()));
    CHECK(nf < 2e3 * s.g_max() / (1 + 2e3 * s.g_max()));
}

TEST_CASE("calibrated configs hit the reference NFs") {
    const auto c32 = calibrated_config(32), c64 = calibrated_config(64);
    const double nf32 = compute_nf(NodalModel(c32), c32, 16, 1).nf;
    const double nf64 = compute_nf(NodalModel(c64), c64, 16, 1).nf;
    CHECK(nf32 == doctest::Approx(0.14).epsilon(0.02));
    CHECK(nf64 == doctest::Approx(0.26).epsilon(0.02));
    CHECK(nf64 > nf32);
    CHECK(c32.r_source == c64.r_source);
    CHECK(c32.r_wire == c64.r_wire);
}

TEST_CASE("single-target calibration bisects the wire resistance") {
    CrossbarConfig base;
    base.r_source = base.r_sink = 100;
    const CalibrationTarget t{8, 0.05};
    const auto r = calibrate_parasitics(base, std::span(&t, 1), 4, 2);
    CHECK(r.r_peripheral == 100);
    REQUIRE(r.achieved.size() == 1);
    CHECK(r.achieved[0].second == doctest::Approx(0.05).epsilon(0.02));
}
