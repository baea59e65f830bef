// xbar-robust <subcommand> --config <file> [--seed N] [--out DIR]

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "xbr/error.hpp"
#include "xbr/harness.hpp"

int main(int argc, char** argv) {
    using namespace xbr;
    CLI::App app{"Crossbar non-ideality and adversarial robustness experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    bool quiet = false;
    const std::map<std::string, std::string> about{
        {"train", "Train (or load) the model and report test accuracy"},
        {"attack-eval", "Accuracy under PGD at each epsilon on one backend"},
        {"nf-calibrate", "Fit crossbar parasitics to NF targets and report NF per size"},
        {"noise-report", "Per-layer SNR and NS between the digital and analog backends"},
        {"sweep", "Digital and analog accuracy under attack, and the robustness gain"},
        {"surrogate-fit", "Fit a learned crossbar model on nodal-solver data"},
    };
    for (const auto& name : harness::subcommands()) {
        auto* sub = app.add_subcommand(name, about.count(name) ? about.at(name) : "");
        sub->add_option("--config", config_path, "YAML config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Overrides the config seed");
        sub->add_option("--out", out_dir, "Overrides the config output_dir");
        sub->add_flag("--quiet", quiet, "No progress output");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string subcommand = app.get_subcommands().front()->get_name();
    const auto* sub = app.get_subcommands().front();

    try {
        auto cfg = harness::ExperimentConfig::from_file(config_path);
        if (sub->count("--seed")) cfg.seed = seed;
        if (sub->count("--out")) cfg.output_dir = out_dir;
        const auto summary = harness::run(subcommand, cfg, quiet ? nullptr : &std::cerr);
        std::cout << cfg.output_dir << " " << summary.at("config_hash").get<std::string>() << " seed=" << cfg.seed
                  << "\n";
    } catch (const ConfigError& e) {
        std::cerr << "xbar-robust: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "xbar-robust: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
