#include "xbr/adv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xbr/error.hpp"

namespace xbr::adv {

double AttackConfig::alpha() const {
    if (step_size > 0.0) return step_size;
    return iterations ? 2.5 * epsilon / static_cast<double>(iterations) : 0.0;
}

void AttackConfig::validate() const {
    std::vector<std::string> problems;
    if (!(epsilon >= 0.0)) problems.push_back("epsilon must be >= 0");
    if (step_size < 0.0) problems.push_back("step_size must be >= 0");
    if (iterations > 0 && epsilon > 0.0 && !(alpha() > 0.0)) problems.push_back("step size must be > 0");
    if (!(pixel_min < pixel_max)) problems.push_back("pixel_min must be below pixel_max");
    if (!problems.empty()) {
        std::string msg = "attack config invalid:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

nlohmann::json AttackConfig::to_json() const {
    return {{"epsilon", epsilon},         {"step_size", alpha()},          {"iterations", iterations},
            {"pixel_min", pixel_min},     {"pixel_max", pixel_max},        {"random_start", random_start},
            {"seed", seed}};
}

Tensor<float> pgd_attack(const GradientFn& gradient, const Tensor<float>& x, std::span<const int> labels,
                         const AttackConfig& cfg) {
    cfg.validate();
    if (cfg.epsilon == 0.0 || cfg.iterations == 0) return x;
    const auto eps = static_cast<float>(cfg.epsilon), alpha = static_cast<float>(cfg.alpha());
    const auto lo_box = static_cast<float>(cfg.pixel_min), hi_box = static_cast<float>(cfg.pixel_max);
    auto project = [&](Tensor<float>& xa) {
        for (std::size_t i = 0; i < xa.size(); ++i) {
            const float lo = std::max(x[i] - eps, lo_box), hi = std::min(x[i] + eps, hi_box);
            xa[i] = std::clamp(xa[i], lo, hi);
        }
    };
    Tensor<float> xa = x;
    if (cfg.random_start) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<float> u(-eps, eps);
        for (auto& v : xa.values()) v += u(rng);
        project(xa);
    }
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const Tensor<float> g = gradient(xa, labels);
        if (g.size() != xa.size()) throw ShapeError("pgd: gradient shape does not match the input");
        for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += alpha * static_cast<float>((g[i] > 0) - (g[i] < 0));
        project(xa);
    }
    return xa;
}

Tensor<float> pgd_attack(nn::Network<float>& net, const Tensor<float>& x, std::span<const int> labels,
                         const AttackConfig& config, nn::Phase phase) {
    if (phase == nn::Phase::train) throw ConfigError("pgd: attacks must not update batch-norm statistics");
    GradientFn fn = [&](const Tensor<float>& xa, std::span<const int> y) {
        return nn::input_gradient(net, xa, y, phase);
    };
    auto out = pgd_attack(fn, x, labels, config);
    net.clear_cache();
    return out;
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (double m : lr_milestones)
        if (static_cast<double>(epoch) >= m * static_cast<double>(epochs)) lr *= lr_decay;
    return lr;
}

void TrainConfig::validate() const {
    std::vector<std::string> problems;
    if (!(epsilon_train >= 0.0)) problems.push_back("epsilon_train must be >= 0");
    if (batch_size == 0) problems.push_back("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) problems.push_back("learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) problems.push_back("momentum must be in [0, 1)");
    if (weight_decay < 0.0) problems.push_back("weight_decay must be >= 0");
    if (epsilon_train > 0.0 && attack_iterations == 0) problems.push_back("attack_iterations must be >= 1");
    for (double m : lr_milestones)
        if (m < 0.0 || m > 1.0) problems.push_back("lr milestones must be fractions in [0, 1]");
    if (!problems.empty()) {
        std::string msg = "train config invalid:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epsilon_train", epsilon_train}, {"attack_iterations", attack_iterations},
            {"attack_step", attack_step},     {"epochs", epochs},
            {"batch_size", batch_size},       {"learning_rate", learning_rate},
            {"momentum", momentum},           {"weight_decay", weight_decay},
            {"lr_milestones", lr_milestones}, {"lr_decay", lr_decay},
            {"augment", augment},             {"seed", seed}};
}

void augment_batch(Tensor<float>& batch, std::uint64_t seed) {
    if (batch.rank() != 4) throw ShapeError("augment: expected (n, C, H, W)");
    constexpr int kPad = 4;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> offset(-kPad, kPad);
    std::bernoulli_distribution flip(0.5);
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    std::vector<float> src(c * h * w);
    for (std::size_t k = 0; k < n; ++k) {
        const int dy = offset(rng), dx = offset(rng);
        const bool mirror = flip(rng);
        float* img = batch.data() + k * c * h * w;
        std::copy(img, img + src.size(), src.begin());
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const int sy = static_cast<int>(y) + dy;
                    const int sx0 = static_cast<int>(mirror ? w - 1 - x : x) + dx;
                    const bool inside = sy >= 0 && sx0 >= 0 && sy < static_cast<int>(h) && sx0 < static_cast<int>(w);
                    img[(ch * h + y) * w + x] =
                        inside ? src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx0)] : 0.0f;
                }
    }
}

TrainResult adversarial_train(nn::Network<float>& net, const data::Dataset& train, const TrainConfig& cfg,
                              const EpochCallback& on_epoch) {
    cfg.validate();
    train.validate();
    if (train.classes != net.spec().classes)
        throw ConfigError("dataset has " + std::to_string(train.classes) + " classes, model expects " +
                          std::to_string(net.spec().classes));
    TrainResult result;
    result.meta.epsilon_train = cfg.epsilon_train;
    result.meta.epochs = cfg.epochs;
    result.meta.seed = cfg.seed;
    result.meta.extra = {{"train", cfg.to_json()}, {"dataset", train.name}, {"train_size", train.size()}};
    if (train.empty() || cfg.epochs == 0) return result;

    auto params = net.parameters();
    nn::Sgd<float> sgd(params, {cfg.momentum, cfg.weight_decay});
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    AttackConfig attack;
    attack.epsilon = cfg.epsilon_train;
    attack.iterations = cfg.attack_iterations;
    attack.step_size = cfg.attack_step;

    std::vector<Tensor<float>> stable;
    for (auto* p : params) stable.push_back(p->value);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate_at(epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            Tensor<float> x = train.images(idx);
            const auto y = train.labels_of(idx);
            if (cfg.augment) augment_batch(x, rng());
            if (cfg.epsilon_train > 0.0) x = pgd_attack(net, x, y, attack, nn::Phase::attack);
            net.zero_grad();
            const auto logits = net.forward(x, nn::Phase::train);
            const auto r = nn::softmax_cross_entropy(logits, std::span<const int>(y));
            if (!std::isfinite(r.loss)) {
                for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = stable[i];
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(begin / cfg.batch_size) + " (lr " + std::to_string(lr) +
                                    "); parameters restored to the end of epoch " +
                                    std::to_string(static_cast<long long>(epoch) - 1));
            }
            net.backward(r.grad, true);
            sgd.step(lr);
            loss_sum += r.loss * static_cast<double>(idx.size());
            correct += r.correct;
            seen += idx.size();
        }
        net.clear_cache();
        for (std::size_t i = 0; i < params.size(); ++i) stable[i] = params[i]->value;
        EpochStats s{epoch, loss_sum / static_cast<double>(seen), 100.0 * static_cast<double>(correct) / static_cast<double>(seen), lr};
        result.history.push_back(s);
        if (on_epoch) on_epoch(s);
    }
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : result.history)
        hist.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"accuracy", h.accuracy}, {"lr", h.learning_rate}});
    result.meta.extra["history"] = hist;
    return result;
}

TrainResult vanilla_train(nn::Network<float>& net, const data::Dataset& train, TrainConfig config,
                          const EpochCallback& on_epoch) {
    config.epsilon_train = 0.0;
    return adversarial_train(net, train, config, on_epoch);
}

}  // namespace xbr::adv
