#pragma once

// Per-layer SNR and noise sensitivity between digital and analog traces, accuracy under
// optional PGD attack, robustness curves, and their CSV forms.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "xbr/adv.hpp"
#include "xbr/data.hpp"
#include "xbr/mapper.hpp"

namespace xbr::metrics {

enum class Reduction {
    ratio_of_sums,  // powers summed over samples, then divided
    mean_of_ratios,  // per-sample ratio, averaged over samples
};

Reduction parse_reduction(const std::string& name);
std::string to_string(Reduction r);

inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

struct LayerNoiseReport {
    std::size_t layer_id = 0;
    std::string name;
    double snr = 0.0;  // log10; kInfiniteSnr when the noise is exactly zero
    double ns = 0.0;
    std::size_t samples = 0;
    std::size_t excluded = 0;  // samples with zero digital signal (NS) or zero noise (SNR, mean_of_ratios)
    bool snr_infinite = false;
};

// Traces are (N, ...) tensors with one row per sample.
// SNR = log10(sum |Z_analog|^2 / sum |Z_digital - Z_analog|^2).
double snr(const Tensor<float>& digital, const Tensor<float>& analog, Reduction r = Reduction::ratio_of_sums,
           bool* infinite = nullptr, std::size_t* excluded = nullptr);
// NS = sum |Z_digital - Z_analog|^2 / sum |Z_digital|^2, skipping samples with zero digital signal.
double noise_sensitivity(const Tensor<float>& digital, const Tensor<float>& analog,
                         Reduction r = Reduction::ratio_of_sums, std::size_t* excluded = nullptr);

// Throws ShapeError when the trace sets do not align.
std::vector<LayerNoiseReport> noise_report(const std::vector<mapper::LayerTrace>& digital,
                                           const std::vector<mapper::LayerTrace>& analog,
                                           Reduction r = Reduction::ratio_of_sums);

// Images on [0, 255] to logits.
using Classifier = std::function<Tensor<float>(const Tensor<float>&)>;

Classifier float_classifier(const nn::Network<float>& net);
Classifier mapped_classifier(const mapper::MappedNetwork& net);

// Top-1 accuracy in percent. With an attack, adversarial images come from `attacker` (the float
// network) and are then classified. Throws ConfigError on an empty dataset.
double evaluate_accuracy(const Classifier& classify, const data::Dataset& dataset, nn::Network<float>* attacker = nullptr,
                         const adv::AttackConfig* attack = nullptr, std::size_t batch_size = 100);

struct CurvePoint {
    double epsilon = 0.0;
    double digital = 0.0;  // percent
    double analog = 0.0;
    double gain = 0.0;  // analog - digital
};

using RobustnessCurve = std::vector<CurvePoint>;

// For each epsilon, one set of adversarial images from `attacker`, scored by both classifiers.
RobustnessCurve robustness_curve(nn::Network<float>& attacker, const data::Dataset& dataset,
                                 const std::vector<double>& epsilons, const Classifier& digital,
                                 const Classifier& analog, const adv::AttackConfig& attack,
                                 std::size_t batch_size = 100);

// "# schema=<name>/<version> <provenance>" then a header row. Doubles use %.17g.
void write_noise_csv(const std::filesystem::path& path, const std::vector<LayerNoiseReport>& rows,
                     const std::string& provenance);
void write_curve_csv(const std::filesystem::path& path, const RobustnessCurve& curve, const std::string& provenance);

inline constexpr const char* kNoiseSchema = "layer_noise/1";
inline constexpr const char* kCurveSchema = "robustness_curve/1";

std::string format_double(double v);

}  // namespace xbr::metrics
