#pragma once

// L-infinity PGD on raw pixels and the vanilla / adversarial training loops.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "xbr/data.hpp"
#include "xbr/nn/network.hpp"

namespace xbr::adv {

struct AttackConfig {
    double epsilon = 8.0;        // pixel units
    double step_size = 0.0;      // pixel units; 0 selects 2.5 * epsilon / iterations
    std::size_t iterations = 10;
    double pixel_min = 0.0;
    double pixel_max = 255.0;
    bool random_start = false;
    std::uint64_t seed = 0;  // random start only

    double alpha() const;
    // Throws ConfigError listing every problem.
    void validate() const;
    nlohmann::json to_json() const;
};

// dL/dx for a batch; the attacker's view of the model.
using GradientFn = std::function<Tensor<float>(const Tensor<float>& x, std::span<const int> labels)>;

// x_{t+1} = clip_{[x-eps, x+eps] and pixel box}(x_t + alpha * sign(grad)). Exactly `iterations`
// steps; a zero gradient leaves the iterate in place.
Tensor<float> pgd_attack(const GradientFn& gradient, const Tensor<float>& x, std::span<const int> labels,
                         const AttackConfig& config);

// Gradients from the float network in the given phase (eval for evaluation-time attacks).
Tensor<float> pgd_attack(nn::Network<float>& net, const Tensor<float>& x, std::span<const int> labels,
                         const AttackConfig& config, nn::Phase phase = nn::Phase::eval);

struct TrainConfig {
    double epsilon_train = 0.0;  // 0 trains on clean batches
    std::size_t attack_iterations = 10;
    double attack_step = 0.0;  // 0 selects the PGD default
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<double> lr_milestones{0.5, 0.75};  // fractions of the run
    double lr_decay = 0.1;
    bool augment = true;  // random crop (pad 4) and horizontal flip
    std::uint64_t seed = 1;

    double learning_rate_at(std::size_t epoch) const;
    void validate() const;
    nlohmann::json to_json() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // on the batches actually trained on, percent
    double learning_rate = 0.0;
};

struct TrainResult {
    nn::CheckpointMeta meta;
    std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Each step generates a PGD batch at epsilon_train with batch statistics frozen (attack phase),
// then takes one SGD step on it. A non-finite loss restores the parameters of the last
// completed epoch and throws TrainingError.
TrainResult adversarial_train(nn::Network<float>& net, const data::Dataset& train, const TrainConfig& config,
                              const EpochCallback& on_epoch = {});

// Same loop on clean batches.
TrainResult vanilla_train(nn::Network<float>& net, const data::Dataset& train, TrainConfig config,
                          const EpochCallback& on_epoch = {});

// Pad-4 random crop and horizontal flip, in place on an (n, C, H, W) batch.
void augment_batch(Tensor<float>& batch, std::uint64_t seed);

}  // namespace xbr::adv
