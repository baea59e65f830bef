#pragma once

// Experiment configuration, dataset selection, model acquisition and the subcommands behind
// the xbar-robust CLI. Every artifact carries the config hash and seed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbr/adv.hpp"
#include "xbr/data.hpp"
#include "xbr/fxp.hpp"
#include "xbr/mapper.hpp"
#include "xbr/metrics.hpp"
#include "xbr/surrogate.hpp"
#include "xbr/xbar.hpp"

namespace xbr::harness {

// Flat key/value configuration. Keys are documented in README.md; defaults are desk scale.
struct ExperimentConfig {
    // run
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::string cache_dir;  // trained checkpoints keyed by training hash; empty disables

    // dataset
    std::string dataset = "synthetic";  // cifar10 | cifar100 | synthetic
    std::string data_path;
    std::size_t classes = 10;  // synthetic only; cifar datasets fix it
    std::size_t train_size = 5000;
    std::size_t test_size = 1000;
    std::uint64_t data_seed = 7;  // synthetic rendering and cifar subset selection
    double synthetic_margin = 0.5;
    double synthetic_nuisance = 1.0;
    double synthetic_noise = 8.0;

    // model and training
    std::string model = "resnet10w1-tiny";
    std::string checkpoint;  // load instead of training when set
    adv::TrainConfig train;  // train.seed is replaced by `seed`

    // attacks
    std::vector<double> epsilons{0, 2, 4, 6, 8, 10, 12, 14, 16};
    std::size_t attack_iterations = 10;
    double attack_step = 0.0;
    bool random_start = false;

    // evaluation
    std::size_t eval_size = 500;      // leading test images used by attack-eval and sweep
    std::size_t noise_samples = 100;  // N for noise-report
    std::size_t eval_batch = 100;
    metrics::Reduction reduction = metrics::Reduction::ratio_of_sums;
    mapper::Backend backend = mapper::Backend::float_reference;  // attack-eval
    mapper::Backend digital_backend = mapper::Backend::float_reference;
    mapper::Backend analog_backend = mapper::Backend::nodal_crossbar;

    // crossbar and precision
    std::string crossbar_preset = "64x64_100k";
    xbar::CrossbarConfig crossbar = xbar::calibrated_config(64);
    std::string precision_preset = "desk";
    fxp::PrecisionConfig precision = fxp::PrecisionConfig::desk();
    std::string surrogate_path;  // surrogate_crossbar backend

    // nf-calibrate
    std::vector<std::size_t> nf_sizes{32, 64};
    std::vector<double> nf_targets{0.14, 0.26};
    std::size_t nf_samples = 16;
    bool nf_fit = true;

    // surrogate-fit
    std::size_t surrogate_size = 4;
    std::size_t surrogate_samples = 5000;
    xbar::SurrogateFitOptions surrogate_fit;

    // Parses YAML text. Unknown keys and bad values are collected and thrown together as a
    // ConfigError; validate() runs on the result.
    static ExperimentConfig from_yaml(const std::string& text);
    static ExperimentConfig from_file(const std::filesystem::path& path);

    // Every violated constraint, empty when valid.
    std::vector<std::string> problems() const;
    void validate() const;

    nlohmann::json to_json() const;
    // FNV-1a of the resolved config without seed and directories.
    std::uint64_t hash() const;
    // Hash of the settings that determine a trained checkpoint, seed included.
    std::uint64_t training_hash() const;
    // "config_hash=<16 hex> seed=<n>"
    std::string provenance() const;

    adv::AttackConfig attack(double epsilon) const;
    mapper::MapperConfig mapper_config(mapper::Backend backend) const;
};

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a(const std::string& bytes);

struct DataSplits {
    data::Dataset train, test;
};
// Synthetic splits share class patterns; CIFAR splits are seeded subsets of the files.
DataSplits load_data(const ExperimentConfig& config);

struct Model {
    std::unique_ptr<nn::Network<float>> net;
    nn::CheckpointMeta meta;
    std::vector<adv::EpochStats> history;
    bool from_cache = false;
};
// Loads `checkpoint`, else a cached checkpoint, else trains (and caches).
Model obtain_model(const ExperimentConfig& config, const data::Dataset& train, std::ostream* log);

std::vector<std::string> subcommands();

// Runs one subcommand, writing its artifacts plus config.json and <subcommand>.json into
// config.output_dir. Returns the summary.
nlohmann::json run(const std::string& subcommand, const ExperimentConfig& config, std::ostream* log = nullptr);

}  // namespace xbr::harness
