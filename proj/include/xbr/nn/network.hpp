#pragma once

// ResNet models for 32x32 images, softmax cross-entropy, SGD and checkpoint files.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbr/nn/layers.hpp"

namespace xbr::nn {

// Stem conv, three residual groups (stride 1, 2, 2), global average pool, linear classifier.
struct ModelSpec {
    std::string name = "resnet10w1";
    std::size_t classes = 10;
    std::size_t in_channels = 3;
    std::size_t image_size = 32;
    std::size_t stem_channels = 16;
    std::vector<std::size_t> widths{16, 32, 64};
    std::vector<std::size_t> depths{1, 1, 2};  // residual blocks per group
    std::vector<double> pixel_mean{125.307, 122.950, 113.865};
    std::vector<double> pixel_std{62.993, 62.089, 66.705};

    // Throws ConfigError listing every problem.
    void validate() const;
    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);
    bool operator==(const ModelSpec&) const = default;
};

// "resnet10w1", "resnet10w4", "resnet20w1", "resnet20w4", "resnet10w1-tiny".
ModelSpec model_spec(const std::string& id);
std::vector<std::string> model_ids();

template <typename T>
class Network {
public:
    explicit Network(ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    Tensor<T> forward(const Tensor<T>& x, Phase phase);
    // Gradient of the loss w.r.t. the network input, given dL/dlogits.
    Tensor<T> backward(const Tensor<T>& grad_logits, bool param_grads);
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec = nullptr) const;

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    std::size_t mapped_op_count() const { return op_count_; }
    void zero_grad();
    void clear_cache() { root_->clear_cache(); }
    void init_he_uniform(std::uint64_t seed);

    // Copies every parameter value from a network of the same spec.
    template <typename U>
    void copy_parameters_from(const Network<U>& other);

    Sequential<T>& root() { return *root_; }
    const Sequential<T>& root() const { return *root_; }

private:
    ModelSpec spec_;
    std::unique_ptr<Sequential<T>> root_;
    std::size_t op_count_ = 0;
};

template <typename T>
template <typename U>
void Network<T>::copy_parameters_from(const Network<U>& other) {
    if (!(spec_ == other.spec())) throw ShapeError("copy_parameters_from: model specs differ");
    auto mine = parameters();
    auto theirs = other.parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) mine[i]->value = theirs[i]->value.template cast<T>();
}

template <typename T>
struct LossResult {
    double loss = 0.0;  // mean over the batch
    Tensor<T> grad;     // dL/dlogits
    std::size_t correct = 0;
};

// Row-wise softmax of (B, K) logits.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean softmax cross-entropy over the batch. Throws ShapeError on label/batch mismatch or
// out-of-range labels.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// dL/dx of the mean cross-entropy at x. Parameter gradients are left untouched.
template <typename T>
Tensor<T> input_gradient(Network<T>& net, const Tensor<T>& x, std::span<const int> labels, Phase phase,
                         double* loss = nullptr);

struct SgdConfig {
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// v = momentum * v + (g + weight_decay * w); w -= lr * v. Frozen parameters are skipped.
template <typename T>
class Sgd {
public:
    Sgd(std::vector<Parameter<T>*> params, SgdConfig config);
    void step(double lr);

private:
    std::vector<Parameter<T>*> params_;
    std::vector<Tensor<T>> velocity_;
    SgdConfig config_;
};

struct CheckpointMeta {
    double epsilon_train = 0.0;
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
    nlohmann::json extra = nlohmann::json::object();  // training config and history
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "XBNN", u32 version, u32 header length + JSON header {model, meta}, u32 parameter count, then
// per parameter: u32 name length + name, u32 rank, u64 dims, little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, const CheckpointMeta& meta);

struct Checkpoint {
    std::unique_ptr<Network<float>> net;
    CheckpointMeta meta;
};

// Throws IngestionError (with byte offset) on malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xbr::nn
