#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "xbr/error.hpp"
#include "xbr/harness.hpp"
#include "xbr/nn/network.hpp"
#include "xbr/surrogate.hpp"

namespace xbr::harness {

namespace {

using Setter = std::function<void(ExperimentConfig&, const YAML::Node&)>;
using Getter = std::function<nlohmann::json(const ExperimentConfig&)>;

struct Key {
    const char* name;
    Setter set;
    Getter get;
};

std::string scalar(const YAML::Node& n) {
    if (!n.IsScalar()) throw ConfigError("expected a scalar");
    return n.Scalar();
}

double as_double(const YAML::Node& n) {
    const std::string s = scalar(n);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

std::uint64_t as_count(const YAML::Node& n) {
    const std::string s = scalar(n);
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw ConfigError("expected a non-negative integer, got '" + s + "'");
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw ConfigError("integer out of range: '" + s + "'");
    }
}

bool as_bool(const YAML::Node& n) {
    const std::string s = scalar(n);
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw ConfigError("expected true or false, got '" + s + "'");
}

template <typename F>
auto as_list(const YAML::Node& n, F item) {
    using V = decltype(item(n));
    std::vector<V> out;
    if (n.IsSequence()) {
        for (const auto& e : n) out.push_back(item(e));
    } else {
        out.push_back(item(n));
    }
    return out;
}

int as_int(const YAML::Node& n) { return static_cast<int>(as_count(n)); }

#define XBR_KEY(key, member, parse) \
    Key { key, [](ExperimentConfig& c, const YAML::Node& n) { c.member = parse(n); }, \
          [](const ExperimentConfig& c) { return nlohmann::json(c.member); } }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        XBR_KEY("seed", seed, as_count),
        XBR_KEY("output_dir", output_dir, scalar),
        XBR_KEY("cache_dir", cache_dir, scalar),
        XBR_KEY("dataset", dataset, scalar),
        XBR_KEY("data_path", data_path, scalar),
        XBR_KEY("classes", classes, as_count),
        XBR_KEY("train_size", train_size, as_count),
        XBR_KEY("test_size", test_size, as_count),
        XBR_KEY("data_seed", data_seed, as_count),
        XBR_KEY("synthetic_margin", synthetic_margin, as_double),
        XBR_KEY("synthetic_nuisance", synthetic_nuisance, as_double),
        XBR_KEY("synthetic_noise", synthetic_noise, as_double),
        XBR_KEY("model", model, scalar),
        XBR_KEY("checkpoint", checkpoint, scalar),
        XBR_KEY("epsilon_train", train.epsilon_train, as_double),
        XBR_KEY("train_attack_iterations", train.attack_iterations, as_count),
        XBR_KEY("train_attack_step", train.attack_step, as_double),
        XBR_KEY("epochs", train.epochs, as_count),
        XBR_KEY("batch_size", train.batch_size, as_count),
        XBR_KEY("learning_rate", train.learning_rate, as_double),
        XBR_KEY("momentum", train.momentum, as_double),
        XBR_KEY("weight_decay", train.weight_decay, as_double),
        Key{"lr_milestones", [](ExperimentConfig& c, const YAML::Node& n) { c.train.lr_milestones = as_list(n, as_double); },
            [](const ExperimentConfig& c) { return nlohmann::json(c.train.lr_milestones); }},
        XBR_KEY("lr_decay", train.lr_decay, as_double),
        XBR_KEY("augment", train.augment, as_bool),
        Key{"epsilons", [](ExperimentConfig& c, const YAML::Node& n) { c.epsilons = as_list(n, as_double); },
            [](const ExperimentConfig& c) { return nlohmann::json(c.epsilons); }},
        XBR_KEY("attack_iterations", attack_iterations, as_count),
        XBR_KEY("attack_step", attack_step, as_double),
        XBR_KEY("random_start", random_start, as_bool),
        XBR_KEY("eval_size", eval_size, as_count),
        XBR_KEY("noise_samples", noise_samples, as_count),
        XBR_KEY("eval_batch", eval_batch, as_count),
        Key{"reduction", [](ExperimentConfig& c, const YAML::Node& n) { c.reduction = metrics::parse_reduction(scalar(n)); },
            [](const ExperimentConfig& c) { return nlohmann::json(metrics::to_string(c.reduction)); }},
        Key{"backend", [](ExperimentConfig& c, const YAML::Node& n) { c.backend = mapper::parse_backend(scalar(n)); },
            [](const ExperimentConfig& c) { return nlohmann::json(mapper::to_string(c.backend)); }},
        Key{"digital_backend",
            [](ExperimentConfig& c, const YAML::Node& n) { c.digital_backend = mapper::parse_backend(scalar(n)); },
            [](const ExperimentConfig& c) { return nlohmann::json(mapper::to_string(c.digital_backend)); }},
        Key{"analog_backend",
            [](ExperimentConfig& c, const YAML::Node& n) { c.analog_backend = mapper::parse_backend(scalar(n)); },
            [](const ExperimentConfig& c) { return nlohmann::json(mapper::to_string(c.analog_backend)); }},
        XBR_KEY("crossbar", crossbar_preset, scalar),
        XBR_KEY("rows", crossbar.rows, as_count),
        XBR_KEY("cols", crossbar.cols, as_count),
        XBR_KEY("r_on", crossbar.r_on, as_double),
        XBR_KEY("r_ratio", crossbar.r_ratio, as_double),
        XBR_KEY("r_source", crossbar.r_source, as_double),
        XBR_KEY("r_sink", crossbar.r_sink, as_double),
        XBR_KEY("r_wire", crossbar.r_wire, as_double),
        XBR_KEY("v_max", crossbar.v_max, as_double),
        Key{"device_model",
            [](ExperimentConfig& c, const YAML::Node& n) { c.crossbar.device = xbar::parse_device_law(scalar(n)); },
            [](const ExperimentConfig& c) { return nlohmann::json(xbar::to_string(c.crossbar.device)); }},
        XBR_KEY("device_v0", crossbar.device_v0, as_double),
        XBR_KEY("precision", precision_preset, scalar),
        XBR_KEY("i_w", precision.input_stream_width, as_int),
        XBR_KEY("w_w", precision.weight_slice_width, as_int),
        XBR_KEY("i_bit", precision.input_bits, as_int),
        XBR_KEY("w_bit", precision.weight_bits, as_int),
        XBR_KEY("i_i_bit", precision.input_integer_bits, as_int),
        XBR_KEY("w_i_bit", precision.weight_integer_bits, as_int),
        XBR_KEY("o_bit", precision.output_bits, as_int),
        XBR_KEY("surrogate_path", surrogate_path, scalar),
        Key{"nf_sizes", [](ExperimentConfig& c, const YAML::Node& n) { c.nf_sizes = as_list(n, as_count); },
            [](const ExperimentConfig& c) { return nlohmann::json(c.nf_sizes); }},
        Key{"nf_targets", [](ExperimentConfig& c, const YAML::Node& n) { c.nf_targets = as_list(n, as_double); },
            [](const ExperimentConfig& c) { return nlohmann::json(c.nf_targets); }},
        XBR_KEY("nf_samples", nf_samples, as_count),
        XBR_KEY("nf_fit", nf_fit, as_bool),
        XBR_KEY("surrogate_size", surrogate_size, as_count),
        XBR_KEY("surrogate_samples", surrogate_samples, as_count),
        XBR_KEY("surrogate_hidden", surrogate_fit.hidden_units, as_count),
        XBR_KEY("surrogate_epochs", surrogate_fit.epochs, as_count),
        XBR_KEY("surrogate_batch", surrogate_fit.batch_size, as_count),
        XBR_KEY("surrogate_lr", surrogate_fit.learning_rate, as_double),
        XBR_KEY("surrogate_holdout", surrogate_fit.holdout_fraction, as_double),
    };
    return table;
}

#undef XBR_KEY

const Key* find_key(const std::string& name) {
    for (const auto& k : keys())
        if (name == k.name) return &k;
    return nullptr;
}

xbar::CrossbarConfig named_crossbar(const std::string& name) {
    if (name == "32x32_100k") return xbar::calibrated_config(32);
    if (name == "64x64_100k") return xbar::calibrated_config(64);
    if (name == "ideal_64x64") return xbar::CrossbarConfig{};
    if (name == "custom") return xbar::CrossbarConfig{};
    throw ConfigError("unknown crossbar preset '" + name + "' (expected 32x32_100k, 64x64_100k, ideal_64x64 or custom)");
}

template <typename F>
void collect(std::vector<std::string>& out, F&& check) {
    try {
        check();
    } catch (const Error& e) {
        // Multi-line messages ("header:\n  - item" ...) become one entry per item.
        std::istringstream in(e.what());
        std::string header, line;
        std::getline(in, header);
        bool any = false;
        while (std::getline(in, line)) {
            const auto start = line.find_first_not_of(" -");
            if (start == std::string::npos) continue;
            std::string h = header;
            if (!h.empty() && h.back() == ':') h.pop_back();
            out.push_back(h + ": " + line.substr(start));
            any = true;
        }
        if (!any) out.push_back(header);
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_yaml(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    if (root.IsNull()) {
        c.validate();
        return c;
    }
    if (!root.IsMap()) throw ConfigError("config: top level must be a mapping of keys to values");

    std::vector<std::string> errors;
    // Presets first so that individual keys override them regardless of order in the file.
    for (const char* preset : {"crossbar", "precision"}) {
        if (!root[preset]) continue;
        collect(errors, [&] {
            try {
                const std::string name = scalar(root[preset]);
                if (std::string(preset) == "crossbar") {
                    c.crossbar = named_crossbar(name);
                    c.crossbar_preset = name;
                } else {
                    c.precision = fxp::PrecisionConfig::preset(name);
                    c.precision_preset = name;
                }
            } catch (const ConfigError& e) {
                throw ConfigError(std::string(preset) + ": " + e.what());
            }
        });
    }
    for (const auto& kv : root) {
        const std::string name = kv.first.as<std::string>();
        if (name == "crossbar" || name == "precision") continue;
        const Key* k = find_key(name);
        if (!k) {
            errors.push_back("unknown key '" + name + "'");
            continue;
        }
        try {
            k->set(c, kv.second);
        } catch (const Error& e) {
            errors.push_back(name + ": " + e.what());
        } catch (const YAML::Exception& e) {
            errors.push_back(name + ": " + e.what());
        }
    }
    for (auto& p : c.problems()) errors.push_back(std::move(p));
    if (!errors.empty()) {
        std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" +
                          (errors.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_yaml(ss.str());
}

std::vector<std::string> ExperimentConfig::problems() const {
    std::vector<std::string> out;
    if (dataset != "cifar10" && dataset != "cifar100" && dataset != "synthetic")
        out.push_back("dataset: expected cifar10, cifar100 or synthetic, got '" + dataset + "'");
    if ((dataset == "cifar10" || dataset == "cifar100") && data_path.empty())
        out.push_back("data_path: required for dataset " + dataset);
    if (train_size == 0) out.push_back("train_size: must be positive");
    if (test_size == 0) out.push_back("test_size: must be positive");
    if (dataset == "synthetic") {
        if (classes < 2) out.push_back("classes: need at least 2");
        if (!(synthetic_margin > 0.0)) out.push_back("synthetic_margin: must be positive");
        if (!(synthetic_nuisance >= 0.0)) out.push_back("synthetic_nuisance: must be non-negative");
        if (!(synthetic_noise >= 0.0)) out.push_back("synthetic_noise: must be non-negative");
    }
    try {
        const auto spec = nn::model_spec(model);
        const std::size_t want = dataset == "cifar10" ? 10 : dataset == "cifar100" ? 100 : classes;
        if (spec.classes != want)
            out.push_back("model: " + model + " has " + std::to_string(spec.classes) + " outputs but the dataset has " +
                          std::to_string(want) + " classes");
    } catch (const Error& e) {
        out.push_back(std::string("model: ") + e.what());
    }
    collect(out, [&] { train.validate(); });
    if (epsilons.empty()) out.push_back("epsilons: need at least one value");
    if (!std::is_sorted(epsilons.begin(), epsilons.end())) out.push_back("epsilons: must be sorted ascending");
    if (std::any_of(epsilons.begin(), epsilons.end(), [](double e) { return !(e >= 0.0) || e > 255.0; }))
        out.push_back("epsilons: values must lie in [0, 255]");
    if (attack_iterations == 0) out.push_back("attack_iterations: must be positive");
    if (!(attack_step >= 0.0)) out.push_back("attack_step: must be non-negative");
    if (eval_size == 0 || eval_size > test_size) out.push_back("eval_size: must be in [1, test_size]");
    if (noise_samples == 0 || noise_samples > test_size) out.push_back("noise_samples: must be in [1, test_size]");
    if (eval_batch == 0) out.push_back("eval_batch: must be positive");
    collect(out, [&] { named_crossbar(crossbar_preset); });
    collect(out, [&] { crossbar.validate(); });
    collect(out, [&] { precision.validate(); });
    const bool needs_surrogate = backend == mapper::Backend::surrogate_crossbar ||
                                 digital_backend == mapper::Backend::surrogate_crossbar ||
                                 analog_backend == mapper::Backend::surrogate_crossbar;
    if (needs_surrogate && surrogate_path.empty())
        out.push_back("surrogate_path: required by the surrogate_crossbar backend");
    if (nf_sizes.empty() || nf_sizes.size() > 2) out.push_back("nf_sizes: need one or two crossbar sizes");
    if (nf_targets.size() != nf_sizes.size()) out.push_back("nf_targets: need one target per entry of nf_sizes");
    if (nf_sizes.size() == 2 && !(nf_sizes[0] < nf_sizes[1])) out.push_back("nf_sizes: must be strictly ascending");
    if (std::any_of(nf_sizes.begin(), nf_sizes.end(), [](std::size_t s) { return s == 0; }))
        out.push_back("nf_sizes: sizes must be positive");
    if (std::any_of(nf_targets.begin(), nf_targets.end(), [](double t) { return !(t > 0.0 && t < 1.0); }))
        out.push_back("nf_targets: values must lie in (0, 1)");
    if (nf_samples == 0) out.push_back("nf_samples: must be positive");
    if (surrogate_size == 0) out.push_back("surrogate_size: must be positive");
    if (surrogate_samples < 2) out.push_back("surrogate_samples: need at least 2");
    if (surrogate_fit.hidden_units == 0) out.push_back("surrogate_hidden: must be positive");
    if (surrogate_fit.epochs == 0) out.push_back("surrogate_epochs: must be positive");
    if (surrogate_fit.batch_size == 0) out.push_back("surrogate_batch: must be positive");
    if (!(surrogate_fit.learning_rate > 0.0)) out.push_back("surrogate_lr: must be positive");
    if (!(surrogate_fit.holdout_fraction > 0.0 && surrogate_fit.holdout_fraction < 1.0))
        out.push_back("surrogate_holdout: must lie in (0, 1)");
    return out;
}

void ExperimentConfig::validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid config (" + std::to_string(p.size()) + " problem" + (p.size() == 1 ? "" : "s") + "):";
    for (const auto& e : p) msg += "\n  - " + e;
    throw ConfigError(msg);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : keys()) j[k.name] = k.get(*this);
    return j;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

std::uint64_t ExperimentConfig::hash() const {
    auto j = to_json();
    j.erase("seed");
    j.erase("output_dir");
    j.erase("cache_dir");
    return fnv1a(j.dump());
}

std::uint64_t ExperimentConfig::training_hash() const {
    const auto all = to_json();
    nlohmann::json j;
    for (const char* k : {"seed", "dataset", "data_path", "classes", "train_size", "data_seed", "synthetic_margin",
                          "synthetic_nuisance", "synthetic_noise", "model", "epsilon_train", "train_attack_iterations",
                          "train_attack_step", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay",
                          "lr_milestones", "lr_decay", "augment"})
        j[k] = all.at(k);
    return fnv1a(j.dump());
}

std::string ExperimentConfig::provenance() const {
    return "config_hash=" + hex64(hash()) + " seed=" + std::to_string(seed);
}

adv::AttackConfig ExperimentConfig::attack(double epsilon) const {
    adv::AttackConfig a;
    a.epsilon = epsilon;
    a.iterations = attack_iterations;
    a.step_size = attack_step;
    a.random_start = random_start;
    a.seed = seed;
    return a;
}

mapper::MapperConfig ExperimentConfig::mapper_config(mapper::Backend b) const {
    mapper::MapperConfig m;
    m.backend = b;
    m.precision = precision;
    m.crossbar = crossbar;
    if (b == mapper::Backend::surrogate_crossbar)
        m.surrogate = std::make_shared<xbar::SurrogateModel>(xbar::SurrogateModel::load(surrogate_path));
    return m;
}

}  // namespace xbr::harness
