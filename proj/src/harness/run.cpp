#include <cstdio>
#include <fstream>
#include <ostream>

#include "xbr/error.hpp"
#include "xbr/harness.hpp"
#include "xbr/surrogate.hpp"

namespace xbr::harness {

namespace fs = std::filesystem;

namespace {

void say(std::ostream* log, const std::string& msg) {
    if (log) *log << msg << std::endl;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// "# schema=<name>/1 <provenance>", header, rows.
void write_csv(const fs::path& path, const std::string& schema, const std::string& provenance,
               const std::string& header, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "# schema=" << schema << " " << provenance << "\n" << header << "\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
        out << "\n";
    }
    if (!out) throw ConfigError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

using metrics::format_double;

std::vector<adv::EpochStats> history_from(const nn::CheckpointMeta& meta) {
    std::vector<adv::EpochStats> h;
    if (!meta.extra.contains("history")) return h;
    for (const auto& e : meta.extra.at("history"))
        h.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(), e.at("accuracy").get<double>(),
                     e.at("lr").get<double>()});
    return h;
}

struct Context {
    const ExperimentConfig& cfg;
    std::ostream* log;
    fs::path out;
    std::string provenance;
};

nlohmann::json run_train(const Context& ctx) {
    const auto splits = load_data(ctx.cfg);
    Model m = obtain_model(ctx.cfg, splits.train, ctx.log);
    save_checkpoint(ctx.out / "model.xbnn", *m.net, m.meta);
    std::vector<std::vector<std::string>> rows;
    for (const auto& h : m.history)
        rows.push_back({std::to_string(h.epoch), format_double(h.loss), format_double(h.accuracy),
                        format_double(h.learning_rate)});
    write_csv(ctx.out / "train_history.csv", "train_history/1", ctx.provenance, "epoch,loss,accuracy,learning_rate",
              rows);
    const double acc = metrics::evaluate_accuracy(metrics::float_classifier(*m.net), splits.test, nullptr, nullptr,
                                                  ctx.cfg.eval_batch);
    say(ctx.log, "test accuracy " + fmt("%.2f", acc) + "%");
    return {{"test_accuracy", acc},
            {"test_size", splits.test.size()},
            {"train_size", splits.train.size()},
            {"checkpoint", "model.xbnn"},
            {"from_cache", m.from_cache}};
}

nlohmann::json run_attack_eval(const Context& ctx) {
    const auto splits = load_data(ctx.cfg);
    Model m = obtain_model(ctx.cfg, splits.train, ctx.log);
    const auto eval = splits.test.slice(0, ctx.cfg.eval_size);
    std::unique_ptr<mapper::MappedNetwork> mapped;
    metrics::Classifier classify = metrics::float_classifier(*m.net);
    if (ctx.cfg.backend != mapper::Backend::float_reference) {
        mapped = std::make_unique<mapper::MappedNetwork>(*m.net, ctx.cfg.mapper_config(ctx.cfg.backend));
        classify = metrics::mapped_classifier(*mapped);
    }
    std::vector<std::vector<std::string>> rows;
    nlohmann::json points = nlohmann::json::array();
    for (double eps : ctx.cfg.epsilons) {
        const auto attack = ctx.cfg.attack(eps);
        const double acc = metrics::evaluate_accuracy(classify, eval, m.net.get(), &attack, ctx.cfg.eval_batch);
        say(ctx.log, "epsilon " + fmt("%g", eps) + ": " + fmt("%.2f", acc) + "%");
        rows.push_back({format_double(eps), format_double(acc)});
        points.push_back({{"epsilon", eps}, {"accuracy", acc}, {"alpha", attack.alpha()}});
    }
    write_csv(ctx.out / "attack_eval.csv", "attack_eval/1", ctx.provenance, "epsilon,accuracy", rows);
    return {{"backend", mapper::to_string(ctx.cfg.backend)}, {"eval_size", eval.size()}, {"points", points}};
}

nlohmann::json run_noise_report(const Context& ctx) {
    const auto splits = load_data(ctx.cfg);
    Model m = obtain_model(ctx.cfg, splits.train, ctx.log);
    const auto sample = splits.test.sample(ctx.cfg.noise_samples, ctx.cfg.seed);
    const auto x = sample.images(0, sample.size());

    mapper::MappedNetwork digital(*m.net, ctx.cfg.mapper_config(ctx.cfg.digital_backend));
    std::vector<mapper::LayerTrace> dt, at;
    const auto zd = digital.forward(x, &dt);
    say(ctx.log, "digital traces done");
    mapper::MappedNetwork analog(*m.net, ctx.cfg.mapper_config(ctx.cfg.analog_backend));
    const auto za = analog.forward(x, &at);
    say(ctx.log, "analog traces done");
    const auto report = metrics::noise_report(dt, at, ctx.cfg.reduction);
    metrics::write_noise_csv(ctx.out / "noise.csv", report, ctx.provenance);

    auto accuracy = [&](const Tensor<float>& logits) {
        const std::size_t k = logits.dim(1);
        std::size_t c = 0;
        for (std::size_t i = 0; i < sample.size(); ++i) {
            const float* z = logits.data() + i * k;
            if (static_cast<int>(std::max_element(z, z + k) - z) == sample.labels[i]) ++c;
        }
        return 100.0 * static_cast<double>(c) / static_cast<double>(sample.size());
    };
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& r : report) {
        layers.push_back({{"layer", r.layer_id},
                          {"name", r.name},
                          {"snr", r.snr_infinite ? nlohmann::json("inf") : nlohmann::json(r.snr)},
                          {"ns", r.ns},
                          {"n", r.samples},
                          {"excluded", r.excluded}});
        say(ctx.log, r.name + ": snr " + fmt("%.3f", r.snr) + " ns " + fmt("%.4g", r.ns));
    }
    return {{"digital_backend", mapper::to_string(ctx.cfg.digital_backend)},
            {"analog_backend", mapper::to_string(ctx.cfg.analog_backend)},
            {"samples", sample.size()},
            {"digital_accuracy", accuracy(zd)},
            {"analog_accuracy", accuracy(za)},
            {"layers", layers}};
}

nlohmann::json run_sweep(const Context& ctx) {
    const auto splits = load_data(ctx.cfg);
    Model m = obtain_model(ctx.cfg, splits.train, ctx.log);
    const auto eval = splits.test.slice(0, ctx.cfg.eval_size);
    auto classifier = [&](mapper::Backend b, std::unique_ptr<mapper::MappedNetwork>& holder) {
        if (b == mapper::Backend::float_reference) return metrics::float_classifier(*m.net);
        holder = std::make_unique<mapper::MappedNetwork>(*m.net, ctx.cfg.mapper_config(b));
        return metrics::mapped_classifier(*holder);
    };
    std::unique_ptr<mapper::MappedNetwork> dh, ah;
    const auto digital = classifier(ctx.cfg.digital_backend, dh);
    const auto analog = classifier(ctx.cfg.analog_backend, ah);
    const auto curve = metrics::robustness_curve(*m.net, eval, ctx.cfg.epsilons, digital, analog,
                                                 ctx.cfg.attack(0.0), ctx.cfg.eval_batch);
    metrics::write_curve_csv(ctx.out / "curve.csv", curve, ctx.provenance);
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : curve) {
        say(ctx.log, "epsilon " + fmt("%g", p.epsilon) + ": digital " + fmt("%.2f", p.digital) + " analog " +
                         fmt("%.2f", p.analog) + " gain " + fmt("%+.2f", p.gain));
        points.push_back({{"epsilon", p.epsilon}, {"digital_acc", p.digital}, {"analog_acc", p.analog}, {"gain", p.gain}});
    }
    return {{"digital_backend", mapper::to_string(ctx.cfg.digital_backend)},
            {"analog_backend", mapper::to_string(ctx.cfg.analog_backend)},
            {"eval_size", eval.size()},
            {"alpha_rule", ctx.cfg.attack_step > 0 ? "fixed" : "2.5*epsilon/iterations"},
            {"curve", points}};
}

nlohmann::json run_nf_calibrate(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::vector<xbar::CalibrationTarget> targets;
    for (std::size_t i = 0; i < cfg.nf_sizes.size(); ++i) targets.push_back({cfg.nf_sizes[i], cfg.nf_targets[i]});

    xbar::CrossbarConfig base = cfg.crossbar;
    if (cfg.nf_fit) {
        const auto fit = xbar::calibrate_parasitics(base, targets, cfg.nf_samples, cfg.seed);
        base.r_source = base.r_sink = fit.r_peripheral;
        base.r_wire = fit.r_wire;
        say(ctx.log, "fitted R_source = R_sink = " + fmt("%.6g", fit.r_peripheral) + " ohm, R_wire = " +
                         fmt("%.6g", fit.r_wire) + " ohm");
    }
    std::vector<std::vector<std::string>> rows;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& t : targets) {
        xbar::CrossbarConfig c = base;
        c.rows = c.cols = t.size;
        const auto r = xbar::compute_nf(xbar::NodalModel(c), c, cfg.nf_samples, cfg.seed);
        say(ctx.log, std::to_string(t.size) + "x" + std::to_string(t.size) + ": NF " + fmt("%.4f", r.nf) +
                         " (target " + fmt("%.3f", t.nf) + ")");
        rows.push_back({std::to_string(t.size), format_double(t.nf), format_double(r.nf), format_double(c.r_source),
                        format_double(c.r_sink), format_double(c.r_wire), std::to_string(r.columns_used),
                        std::to_string(r.columns_excluded)});
        entries.push_back({{"size", t.size},
                           {"target_nf", t.nf},
                           {"nf", r.nf},
                           {"r_source", c.r_source},
                           {"r_sink", c.r_sink},
                           {"r_wire", c.r_wire},
                           {"columns_used", r.columns_used},
                           {"columns_excluded", r.columns_excluded}});
    }
    write_csv(ctx.out / "nf.csv", "nf_calibration/1", ctx.provenance,
              "size,target_nf,nf,r_source,r_sink,r_wire,columns_used,columns_excluded", rows);
    return {{"fitted", cfg.nf_fit}, {"samples", cfg.nf_samples}, {"entries", entries}};
}

// Samples used when comparing the NF of the nodal solver and the fitted surrogate.
constexpr std::size_t kSurrogateNfSamples = 256;

nlohmann::json run_surrogate_fit(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    xbar::CrossbarConfig c = cfg.crossbar;
    c.rows = c.cols = cfg.surrogate_size;
    const auto records = xbar::generate_surrogate_dataset(c, cfg.surrogate_samples, cfg.seed);
    xbar::write_surrogate_dataset(ctx.out / "surrogate_dataset.bin", records);
    say(ctx.log, "generated " + std::to_string(records.size()) + " nodal records");
    auto opts = cfg.surrogate_fit;
    opts.seed = cfg.seed;
    const auto model = xbar::fit_surrogate(records, c, opts);
    model.save(ctx.out / "surrogate.json");
    const auto& rep = model.report();
    const auto nf_nodal = xbar::compute_nf(xbar::NodalModel(c), c, kSurrogateNfSamples, cfg.seed + 1);
    const auto nf_sur = xbar::compute_nf(model, c, kSurrogateNfSamples, cfg.seed + 1);
    const double mse_frac = rep.heldout_variance > 0 ? rep.heldout_mse / rep.heldout_variance : 0.0;
    say(ctx.log, "held-out MSE / variance " + fmt("%.4g", mse_frac) + ", NF nodal " + fmt("%.4f", nf_nodal.nf) +
                     " surrogate " + fmt("%.4f", nf_sur.nf));
    const std::vector<std::pair<std::string, double>> metrics_rows = {
        {"train_mse", rep.train_mse},
        {"heldout_mse", rep.heldout_mse},
        {"heldout_variance", rep.heldout_variance},
        {"heldout_mse_fraction", mse_frac},
        {"heldout_relative_error", rep.heldout_relative_error},
        {"nf_nodal", nf_nodal.nf},
        {"nf_surrogate", nf_sur.nf},
    };
    std::vector<std::vector<std::string>> rows;
    nlohmann::json res;
    for (const auto& [k, v] : metrics_rows) {
        rows.push_back({k, format_double(v)});
        res[k] = v;
    }
    write_csv(ctx.out / "surrogate.csv", "surrogate_fit/1", ctx.provenance, "metric,value", rows);
    res["train_count"] = rep.train_count;
    res["heldout_count"] = rep.heldout_count;
    res["dataset_hash"] = hex64(rep.dataset_hash);
    res["model"] = "surrogate.json";
    return res;
}

using Handler = nlohmann::json (*)(const Context&);

const std::vector<std::pair<std::string, Handler>>& handlers() {
    static const std::vector<std::pair<std::string, Handler>> h = {
        {"train", run_train},
        {"attack-eval", run_attack_eval},
        {"nf-calibrate", run_nf_calibrate},
        {"noise-report", run_noise_report},
        {"sweep", run_sweep},
        {"surrogate-fit", run_surrogate_fit},
    };
    return h;
}

}  // namespace

DataSplits load_data(const ExperimentConfig& cfg) {
    DataSplits s;
    if (cfg.dataset == "synthetic") {
        data::SyntheticOptions o;
        o.margin = cfg.synthetic_margin;
        o.nuisance = cfg.synthetic_nuisance;
        o.pixel_noise = cfg.synthetic_noise;
        const auto all = data::make_synthetic(cfg.classes, cfg.train_size + cfg.test_size, cfg.data_seed, o);
        s.train = all.slice(0, cfg.train_size);
        s.test = all.slice(cfg.train_size, all.size());
        return s;
    }
    const auto kind = cfg.dataset == "cifar100" ? data::CifarKind::cifar100 : data::CifarKind::cifar10;
    auto train = data::load_cifar_split(cfg.data_path, kind, true);
    auto test = data::load_cifar_split(cfg.data_path, kind, false);
    if (cfg.train_size > train.size() || cfg.test_size > test.size())
        throw ConfigError("train_size/test_size exceed the " + cfg.dataset + " splits (" + std::to_string(train.size()) +
                          "/" + std::to_string(test.size()) + ")");
    s.train = cfg.train_size == train.size() ? std::move(train) : train.sample(cfg.train_size, cfg.data_seed);
    s.test = cfg.test_size == test.size() ? std::move(test) : test.sample(cfg.test_size, cfg.data_seed);
    return s;
}

Model obtain_model(const ExperimentConfig& cfg, const data::Dataset& train, std::ostream* log) {
    Model m;
    auto finish = [&](nn::Checkpoint ck) {
        if (ck.net->spec().name != cfg.model)
            throw ConfigError("checkpoint holds model " + ck.net->spec().name + " but the config asks for " + cfg.model);
        m.net = std::move(ck.net);
        m.meta = std::move(ck.meta);
        m.history = history_from(m.meta);
        return std::move(m);
    };
    if (!cfg.checkpoint.empty()) {
        say(log, "loading checkpoint " + cfg.checkpoint);
        return finish(nn::load_checkpoint(cfg.checkpoint));
    }
    fs::path cached;
    if (!cfg.cache_dir.empty()) {
        cached = fs::path(cfg.cache_dir) / (cfg.model + "-" + hex64(cfg.training_hash()) + ".xbnn");
        if (fs::exists(cached)) {
            say(log, "using cached checkpoint " + cached.string());
            m.from_cache = true;
            return finish(nn::load_checkpoint(cached));
        }
    }
    m.net = std::make_unique<nn::Network<float>>(nn::model_spec(cfg.model));
    m.net->init_he_uniform(cfg.seed);
    auto tc = cfg.train;
    tc.seed = cfg.seed;
    say(log, "training " + cfg.model + " on " + std::to_string(train.size()) + " images, epsilon_train " +
                 fmt("%g", tc.epsilon_train) + ", " + std::to_string(tc.epochs) + " epochs");
    auto result = adv::adversarial_train(*m.net, train, tc, [&](const adv::EpochStats& s) {
        say(log, "epoch " + std::to_string(s.epoch) + " loss " + fmt("%.4f", s.loss) + " acc " + fmt("%.2f", s.accuracy) +
                     " lr " + fmt("%g", s.learning_rate));
    });
    result.meta.extra["model"] = cfg.model;
    result.meta.extra["training_hash"] = hex64(cfg.training_hash());
    m.meta = result.meta;
    m.history = result.history;
    if (!cached.empty()) {
        fs::create_directories(cached.parent_path());
        const fs::path tmp = cached.string() + ".tmp";
        nn::save_checkpoint(tmp, *m.net, m.meta);
        fs::rename(tmp, cached);
    }
    return m;
}

std::vector<std::string> subcommands() {
    std::vector<std::string> out;
    for (const auto& [name, h] : handlers()) out.push_back(name);
    return out;
}

nlohmann::json run(const std::string& subcommand, const ExperimentConfig& cfg, std::ostream* log) {
    Handler handler = nullptr;
    for (const auto& [name, h] : handlers())
        if (name == subcommand) handler = h;
    if (!handler) {
        std::string known;
        for (const auto& n : subcommands()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown subcommand '" + subcommand + "' (expected one of: " + known + ")");
    }
    cfg.validate();
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    nlohmann::json header = {{"config_hash", hex64(cfg.hash())}, {"seed", cfg.seed}, {"config", cfg.to_json()}};
    nlohmann::json config_doc = header;
    config_doc["schema"] = "resolved_config/1";
    write_json(out / "config.json", config_doc);

    Context ctx{cfg, log, out, cfg.provenance()};
    nlohmann::json summary = header;
    summary["schema"] = "summary/1";
    summary["subcommand"] = subcommand;
    summary["results"] = handler(ctx);
    write_json(out / (subcommand + ".json"), summary);
    return summary;
}

}  // namespace xbr::harness
