#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "xbr/error.hpp"
#include "xbr/surrogate.hpp"

using namespace xbr;
using namespace xbr::xbar;

namespace {
std::filesystem::path tmp_dir() {
    const char* env = std::getenv("XBR_TEST_TMP");
    auto p = std::filesystem::path(env ? env : "/tmp/xbr_test") / "surrogate";
    std::filesystem::create_directories(p);
    return p;
}
}  // namespace

TEST_CASE("surrogate dataset records are solver outputs") {
    auto c = calibrated_config(4);
    c.rows = c.cols = 3;
    CHECK(generate_surrogate_dataset(c, 0, 1).empty());
    const auto recs = generate_surrogate_dataset(c, 20, 4);
    REQUIRE(recs.size() == 20);
    for (const auto& r : recs) {
        ConductanceMatrix g(3, 3);
        std::copy(r.g.begin(), r.g.end(), g.values().begin());
        const auto i = nonideal_mvm_nodal(r.v, g, c);
        for (std::size_t j = 0; j < 3; ++j) CHECK(i[j] == r.i[j]);
        for (double v : r.v) CHECK((v >= 0.0 && v <= c.v_max));
    }
    CHECK(dataset_hash(recs) == dataset_hash(generate_surrogate_dataset(c, 20, 4)));
}

TEST_CASE("surrogate dataset file round trip") {
    CrossbarConfig c;
    c.rows = 2;
    c.cols = 3;
    const auto recs = generate_surrogate_dataset(c, 7, 2);
    const auto path = tmp_dir() / "records.bin";
    write_surrogate_dataset(path, recs);
    CHECK(std::filesystem::file_size(path) == 7 * (2 + 6 + 3) * 8);
    const auto back = read_surrogate_dataset(path, 2, 3);
    REQUIRE(back.size() == 7);
    CHECK(dataset_hash(back) == dataset_hash(recs));
    std::filesystem::resize_file(path, 7 * 11 * 8 - 5);
    CHECK_THROWS_AS(read_surrogate_dataset(path, 2, 3), IngestionError);
}

TEST_CASE("surrogate learns a parasitic-free crossbar") {
    CrossbarConfig c;
    c.rows = c.cols = 2;
    const auto recs = generate_surrogate_dataset(c, 2000, 3);
    SurrogateFitOptions o;
    o.hidden_units = 32;
    o.epochs = 200;
    const auto m = fit_surrogate(recs, c, o);
    CHECK(m.report().heldout_relative_error < 0.02);
    CHECK(m.report().heldout_count == 200);

    ConductanceMatrix g(2, 2, c.g_max());
    const auto zero = m.mvm(std::vector<double>{0.0, 0.0}, g);
    // V = 0 is a corner of the sampled domain, so allow a tenth of full-scale current
    for (double x : zero) CHECK(std::abs(x) < 0.1 * c.v_max * 2 * c.g_max());

    const auto path = tmp_dir() / "model.json";
    m.save(path);
    const auto back = SurrogateModel::load(path);
    const std::vector<double> v{0.1, 0.2};
    CHECK(back.mvm(v, g) == m.mvm(v, g));
}
