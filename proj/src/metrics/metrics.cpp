#include "xbr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "xbr/error.hpp"

namespace xbr::metrics {

namespace {

struct SamplePowers {
    double signal_digital = 0.0;
    double signal_analog = 0.0;
    double noise = 0.0;
};

std::vector<SamplePowers> per_sample(const Tensor<float>& d, const Tensor<float>& a) {
    if (d.shape() != a.shape())
        throw ShapeError("trace shapes differ: " + shape_string(d.shape()) + " vs " + shape_string(a.shape()));
    if (d.rank() == 0 || d.dim(0) == 0) throw ShapeError("traces hold no samples");
    const std::size_t n = d.dim(0), per = d.size() / n;
    std::vector<SamplePowers> out(n);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = s * per; k < (s + 1) * per; ++k) {
            const double zd = d[k], za = a[k], e = zd - za;
            out[s].signal_digital += zd * zd;
            out[s].signal_analog += za * za;
            out[s].noise += e * e;
        }
    return out;
}

}  // namespace

Reduction parse_reduction(const std::string& name) {
    if (name == "ratio_of_sums") return Reduction::ratio_of_sums;
    if (name == "mean_of_ratios") return Reduction::mean_of_ratios;
    throw ConfigError("unknown reduction '" + name + "' (expected ratio_of_sums or mean_of_ratios)");
}

std::string to_string(Reduction r) { return r == Reduction::ratio_of_sums ? "ratio_of_sums" : "mean_of_ratios"; }

double snr(const Tensor<float>& digital, const Tensor<float>& analog, Reduction r, bool* infinite,
           std::size_t* excluded) {
    const auto p = per_sample(digital, analog);
    if (infinite) *infinite = false;
    if (excluded) *excluded = 0;
    if (r == Reduction::ratio_of_sums) {
        double s = 0.0, n = 0.0;
        for (const auto& x : p) {
            s += x.signal_analog;
            n += x.noise;
        }
        if (n == 0.0) {
            if (infinite) *infinite = true;
            return kInfiniteSnr;
        }
        return std::log10(s / n);
    }
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& x : p) {
        if (x.noise == 0.0) continue;
        sum += x.signal_analog / x.noise;
        ++used;
    }
    if (excluded) *excluded = p.size() - used;
    if (used == 0) {
        if (infinite) *infinite = true;
        return kInfiniteSnr;
    }
    return std::log10(sum / static_cast<double>(used));
}

double noise_sensitivity(const Tensor<float>& digital, const Tensor<float>& analog, Reduction r,
                         std::size_t* excluded) {
    const auto p = per_sample(digital, analog);
    double num = 0.0, den = 0.0, ratios = 0.0;
    std::size_t used = 0;
    for (const auto& x : p) {
        if (x.signal_digital == 0.0) continue;
        num += x.noise;
        den += x.signal_digital;
        ratios += x.noise / x.signal_digital;
        ++used;
    }
    if (excluded) *excluded = p.size() - used;
    if (used == 0) return 0.0;
    return r == Reduction::ratio_of_sums ? num / den : ratios / static_cast<double>(used);
}

std::vector<LayerNoiseReport> noise_report(const std::vector<mapper::LayerTrace>& digital,
                                           const std::vector<mapper::LayerTrace>& analog, Reduction r) {
    if (digital.size() != analog.size())
        throw ShapeError("trace sets differ in length: " + std::to_string(digital.size()) + " vs " +
                         std::to_string(analog.size()));
    std::vector<LayerNoiseReport> out;
    for (std::size_t i = 0; i < digital.size(); ++i) {
        if (digital[i].layer_id != analog[i].layer_id)
            throw ShapeError("trace sets are not aligned at position " + std::to_string(i));
        LayerNoiseReport rep;
        rep.layer_id = digital[i].layer_id;
        rep.name = digital[i].name;
        rep.samples = digital[i].z.dim(0);
        std::size_t ex_snr = 0, ex_ns = 0;
        rep.snr = snr(digital[i].z, analog[i].z, r, &rep.snr_infinite, &ex_snr);
        rep.ns = noise_sensitivity(digital[i].z, analog[i].z, r, &ex_ns);
        rep.excluded = std::max(ex_snr, ex_ns);
        out.push_back(rep);
    }
    return out;
}

Classifier float_classifier(const nn::Network<float>& net) {
    return [&net](const Tensor<float>& x) { return net.infer(x); };
}

Classifier mapped_classifier(const mapper::MappedNetwork& net) {
    return [&net](const Tensor<float>& x) { return net.forward(x); };
}

namespace {

std::size_t count_correct(const Tensor<float>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) throw ShapeError("classifier returned wrong shape");
    const std::size_t k = logits.dim(1);
    std::size_t c = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const float* z = logits.data() + i * k;
        if (static_cast<int>(std::max_element(z, z + k) - z) == labels[i]) ++c;
    }
    return c;
}

}  // namespace

double evaluate_accuracy(const Classifier& classify, const data::Dataset& dataset, nn::Network<float>* attacker,
                         const adv::AttackConfig* attack, std::size_t batch_size) {
    if (dataset.empty()) throw ConfigError("evaluate_accuracy: empty dataset");
    if (attack && !attacker) throw ConfigError("evaluate_accuracy: an attack needs the float network");
    std::size_t correct = 0;
    for (std::size_t b = 0; b < dataset.size(); b += batch_size) {
        const std::size_t e = std::min(dataset.size(), b + batch_size);
        Tensor<float> x = dataset.images(b, e);
        const std::span<const int> y(dataset.labels.data() + b, e - b);
        if (attack) x = adv::pgd_attack(*attacker, x, y, *attack);
        correct += count_correct(classify(x), y);
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RobustnessCurve robustness_curve(nn::Network<float>& attacker, const data::Dataset& dataset,
                                 const std::vector<double>& epsilons, const Classifier& digital,
                                 const Classifier& analog, const adv::AttackConfig& attack, std::size_t batch_size) {
    if (dataset.empty()) throw ConfigError("robustness_curve: empty dataset");
    RobustnessCurve curve;
    for (double eps : epsilons) {
        adv::AttackConfig a = attack;
        a.epsilon = eps;
        std::size_t cd = 0, ca = 0;
        for (std::size_t b = 0; b < dataset.size(); b += batch_size) {
            const std::size_t e = std::min(dataset.size(), b + batch_size);
            Tensor<float> x = dataset.images(b, e);
            const std::span<const int> y(dataset.labels.data() + b, e - b);
            x = adv::pgd_attack(attacker, x, y, a);
            cd += count_correct(digital(x), y);
            ca += count_correct(analog(x), y);
        }
        CurvePoint p;
        p.epsilon = eps;
        p.digital = 100.0 * static_cast<double>(cd) / static_cast<double>(dataset.size());
        p.analog = 100.0 * static_cast<double>(ca) / static_cast<double>(dataset.size());
        p.gain = p.analog - p.digital;
        curve.push_back(p);
    }
    return curve;
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const char* schema, const std::string& provenance) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IngestionError("cannot write " + path.string());
    os << "# schema=" << schema;
    if (!provenance.empty()) os << ' ' << provenance;
    os << '\n';
    return os;
}

}  // namespace

void write_noise_csv(const std::filesystem::path& path, const std::vector<LayerNoiseReport>& rows,
                     const std::string& provenance) {
    auto os = open_csv(path, kNoiseSchema, provenance);
    os << "layer,snr,ns,n\n";
    for (const auto& r : rows)
        os << r.layer_id << ',' << format_double(r.snr) << ',' << format_double(r.ns) << ',' << r.samples << '\n';
}

void write_curve_csv(const std::filesystem::path& path, const RobustnessCurve& curve, const std::string& provenance) {
    auto os = open_csv(path, kCurveSchema, provenance);
    os << "epsilon,digital_acc,analog_acc,gain\n";
    for (const auto& p : curve)
        os << format_double(p.epsilon) << ',' << format_double(p.digital) << ',' << format_double(p.analog) << ','
           << format_double(p.gain) << '\n';
}

}  // namespace xbr::metrics
