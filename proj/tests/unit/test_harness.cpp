#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xbr/error.hpp"
#include "xbr/harness.hpp"

using namespace xbr;
using namespace xbr::harness;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
    const char* env = std::getenv("XBR_TEST_TMP");
    auto p = std::filesystem::path(env ? env : "/tmp/xbr_test") / "harness" / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Everything after the provenance line.
std::string body(const std::string& csv) { return csv.substr(csv.find('\n') + 1); }

ExperimentConfig small(const std::filesystem::path& out) {
    auto c = ExperimentConfig::from_yaml(R"(
train_size: 100
test_size: 40
epochs: 1
batch_size: 50
eval_size: 40
noise_samples: 8
epsilons: [0, 4]
attack_iterations: 2
)");
    c.output_dir = out.string();
    return c;
}

}  // namespace

TEST_CASE("empty config resolves to the defaults") {
    const auto c = ExperimentConfig::from_yaml("");
    CHECK(c.epsilons == std::vector<double>{0, 2, 4, 6, 8, 10, 12, 14, 16});
    CHECK(c.model == "resnet10w1-tiny");
    CHECK(c.train_size == 5000);
    CHECK(c.train.epochs == 20);
    CHECK(c.attack_iterations == 10);
    CHECK(c.noise_samples == 100);
    CHECK(c.crossbar.rows == 64);
    CHECK(c.precision.input_integer_bits == 6);
    CHECK(c.precision.weight_integer_bits == 3);
    const auto j = c.to_json();
    for (const char* k : {"seed", "dataset", "i_w", "w_w", "i_bit", "w_bit", "i_i_bit", "w_i_bit", "o_bit", "rows", "cols",
                          "r_on", "r_ratio", "r_source", "r_sink", "r_wire", "v_max", "device_model", "epsilons"})
        CHECK(j.contains(k));
}

TEST_CASE("presets apply before individual keys") {
    const auto c = ExperimentConfig::from_yaml("r_wire: 5\ncrossbar: 32x32_100k\ni_i_bit: 6\nprecision: cifar10\n");
    CHECK(c.crossbar.rows == 32);
    CHECK(c.crossbar.r_wire == 5.0);
    CHECK(c.precision.input_integer_bits == 6);
    CHECK(c.precision.weight_integer_bits == 13);
    CHECK(ExperimentConfig::from_yaml("epsilons: 4").epsilons == std::vector<double>{4});
}

TEST_CASE("every config problem is reported at once") {
    try {
        ExperimentConfig::from_yaml("epsilons: [8, 2]\nfoo: 1\nepochs: x\nmodel: nope\nrows: 0\ndataset: cifar10\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const char* needle : {"unknown key 'foo'", "epochs:", "model:", "sorted ascending", "rows", "data_path"})
            CHECK_MESSAGE(msg.find(needle) != std::string::npos, needle);
    }
    CHECK_THROWS_AS(ExperimentConfig::from_yaml("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_yaml("analog_backend: surrogate"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_yaml("classes: 5"), ConfigError);
}

TEST_CASE("config hash ignores seed and directories") {
    auto a = ExperimentConfig::from_yaml("");
    auto b = a;
    b.seed = 9;
    b.output_dir = "elsewhere";
    b.cache_dir = "cache";
    CHECK(a.hash() == b.hash());
    CHECK(a.training_hash() != b.training_hash());
    b.epsilons = {0, 4};
    CHECK(a.hash() != b.hash());
    CHECK(hex64(a.hash()).size() == 16);
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(a.provenance() == "config_hash=" + hex64(a.hash()) + " seed=1");
}

TEST_CASE("unknown subcommand") {
    CHECK_THROWS_AS(run("plot", ExperimentConfig::from_yaml("")), ConfigError);
    CHECK(subcommands().size() == 6);
}

TEST_CASE("nf-calibrate without fitting reports the configured parasitics") {
    const auto out = tmp_dir("nf");
    auto c = ExperimentConfig::from_yaml("nf_fit: false\nnf_samples: 4");
    c.output_dir = out.string();
    const auto s = run("nf-calibrate", c);
    const auto& e = s.at("results").at("entries");
    REQUIRE(e.size() == 2);
    CHECK(e[1].at("nf").get<double>() > e[0].at("nf").get<double>());
    const auto csv = slurp(out / "nf.csv");
    CHECK(csv.rfind("# schema=nf_calibration/1 " + c.provenance() + "\n", 0) == 0);
    CHECK(std::filesystem::exists(out / "config.json"));
    CHECK(std::filesystem::exists(out / "nf-calibrate.json"));
}

TEST_CASE("train, attack-eval, sweep and noise-report on a small run") {
    const auto out = tmp_dir("small");
    auto c = small(out);
    c.cache_dir = (out / "cache").string();
    const auto t = run("train", c);
    CHECK(!t.at("results").at("from_cache").get<bool>());
    CHECK(std::filesystem::exists(out / "model.xbnn"));
    const auto history = slurp(out / "train_history.csv");
    CHECK(history.find("epoch,loss,accuracy,learning_rate\n0,") != std::string::npos);

    c.analog_backend = mapper::Backend::float_reference;
    const auto s = run("sweep", c);
    for (const auto& p : s.at("results").at("curve")) CHECK(p.at("gain").get<double>() == 0.0);
    const auto curve1 = slurp(out / "curve.csv");
    CHECK(curve1.rfind("# schema=robustness_curve/1 " + c.provenance(), 0) == 0);

    // second run comes from the cache and reproduces the artifacts byte for byte
    run("sweep", c);
    CHECK(slurp(out / "curve.csv") == curve1);
    c.analog_backend = mapper::Backend::ideal_crossbar;
    CHECK(run("train", c).at("results").at("from_cache").get<bool>());
    CHECK(body(slurp(out / "train_history.csv")) == body(history));

    c.backend = mapper::Backend::ideal_crossbar;
    const auto a = run("attack-eval", c);
    CHECK(a.at("results").at("points").size() == 2);

    const auto n = run("noise-report", c);
    const auto& layers = n.at("results").at("layers");
    CHECK(layers.size() == 12);
    for (const auto& l : layers) CHECK(l.at("n").get<std::size_t>() == 8);
    CHECK(slurp(out / "noise.csv").find("layer,snr,ns,n\n0,") != std::string::npos);

    c.checkpoint = (out / "model.xbnn").string();
    c.cache_dir.clear();
    c.analog_backend = mapper::Backend::float_reference;
    run("sweep", c);
    CHECK(body(slurp(out / "curve.csv")) == body(curve1));
}

TEST_CASE("surrogate-fit writes its model and report") {
    const auto out = tmp_dir("surrogate");
    auto c = ExperimentConfig::from_yaml("surrogate_samples: 200\nsurrogate_epochs: 3\nsurrogate_hidden: 8\n");
    c.output_dir = out.string();
    const auto s = run("surrogate-fit", c);
    CHECK(std::filesystem::file_size(out / "surrogate_dataset.bin") == 200 * (4 + 16 + 4) * 8);
    CHECK(std::filesystem::exists(out / "surrogate.json"));
    CHECK(s.at("results").contains("nf_surrogate"));
    CHECK(slurp(out / "surrogate.csv").find("metric,value\ntrain_mse,") != std::string::npos);
}
