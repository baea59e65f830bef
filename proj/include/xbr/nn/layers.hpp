#pragma once

// Differentiable layers with hand-written backward passes.
//
// forward() caches what backward() needs; infer() is const, caches nothing and may run
// concurrently on one module. When infer() receives an MvmExecutor, every conv/linear
// operation (with a following batch norm folded in) is delegated to it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xbr/nn/ops.hpp"
#include "xbr/tensor.hpp"

namespace xbr::nn {

enum class Phase {
    train,   // batch statistics, running statistics updated
    attack,  // batch statistics, running statistics left alone
    eval,    // running statistics
};

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
    std::size_t fan_in = 0;  // set on conv/linear weights for initialization
};

enum class OpKind { conv, linear };

// One crossbar-mappable matrix operation as seen at inference time.
template <typename T>
struct MappedOp {
    std::size_t id = 0;  // execution-order index among mapped ops
    OpKind kind = OpKind::conv;
    ConvGeometry geometry;  // linear ops: in/out features, kernel 1, stride 1, padding 0
    const Tensor<T>* weight = nullptr;  // conv OIHW, linear (out, in)
    std::span<const T> bias;
    std::string name;
};

template <typename T>
class MvmExecutor {
public:
    virtual ~MvmExecutor() = default;
    virtual Tensor<T> run(const MappedOp<T>& op, const Tensor<T>& input) = 0;
};

template <typename T>
class Module {
public:
    explicit Module(std::string name) : name_(std::move(name)) {}
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    virtual Tensor<T> forward(const Tensor<T>& x, Phase phase) = 0;
    // Returns dL/dx; accumulates parameter gradients when param_grads is set.
    virtual Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) = 0;
    virtual Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const = 0;

    virtual void collect_parameters(std::vector<Parameter<T>*>& out) { (void)out; }
    // Mapped conv/linear ops in execution order.
    virtual void assign_op_ids(std::size_t& next) { (void)next; }
    virtual void clear_cache() {}

    const std::string& name() const { return name_; }

private:
    std::string name_;
};

template <typename T>
using ModulePtr = std::unique_ptr<Module<T>>;

// Per-channel (x - mean) / std on raw pixel values.
template <typename T>
class Normalize final : public Module<T> {
public:
    Normalize(std::string name, std::vector<T> mean, std::vector<T> stddev);
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;

private:
    Parameter<T> mean_, std_;
};

template <typename T>
class Conv2d final : public Module<T> {
public:
    Conv2d(std::string name, ConvGeometry geometry, bool with_bias = false);
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void assign_op_ids(std::size_t& next) override { op_id_ = next++; }
    void clear_cache() override;

    const ConvGeometry& geometry() const { return geometry_; }
    Parameter<T>& weight() { return weight_; }
    const Parameter<T>& weight() const { return weight_; }
    bool has_bias() const { return has_bias_; }
    const Parameter<T>& bias() const { return bias_; }
    Parameter<T>& bias() { return bias_; }
    std::size_t op_id() const { return op_id_; }

private:
    ConvGeometry geometry_;
    bool has_bias_;
    Parameter<T> weight_, bias_;
    std::size_t op_id_ = 0;
    Tensor<T> cols_;  // lowered inputs of the last forward
    Shape in_shape_;
};

template <typename T>
class BatchNorm2d final : public Module<T> {
public:
    BatchNorm2d(std::string name, std::size_t channels, T momentum = T(0.1), T eps = T(1e-5));
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void clear_cache() override;

    // Inference-time affine map y = scale * x + shift per channel.
    void folded(std::vector<T>& scale, std::vector<T>& shift) const;

    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }
    Parameter<T>& running_mean() { return running_mean_; }
    Parameter<T>& running_var() { return running_var_; }

private:
    std::size_t channels_;
    T momentum_, eps_;
    Parameter<T> gamma_, beta_, running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
    bool batch_stats_ = true;
};

template <typename T>
class ReLU final : public Module<T> {
public:
    using Module<T>::Module;
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void clear_cache() override { out_ = {}; }

private:
    Tensor<T> out_;
};

// (B, C, H, W) -> (B, C)
template <typename T>
class GlobalAvgPool final : public Module<T> {
public:
    using Module<T>::Module;
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;

private:
    Shape in_shape_;
};

// Flattens everything but the batch dimension.
template <typename T>
class Flatten final : public Module<T> {
public:
    using Module<T>::Module;
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;

private:
    Shape in_shape_;
};

template <typename T>
class Linear final : public Module<T> {
public:
    Linear(std::string name, std::size_t in_features, std::size_t out_features, bool with_bias = true);
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void assign_op_ids(std::size_t& next) override { op_id_ = next++; }
    void clear_cache() override { in_ = {}; }

    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    std::size_t op_id() const { return op_id_; }

private:
    std::size_t in_features_, out_features_;
    bool has_bias_;
    Parameter<T> weight_, bias_;
    std::size_t op_id_ = 0;
    Tensor<T> in_;
};

template <typename T>
class Sequential final : public Module<T> {
public:
    using Module<T>::Module;
    Sequential& add(ModulePtr<T> m) {
        children_.push_back(std::move(m));
        return *this;
    }
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    // Conv2d immediately followed by BatchNorm2d reaches the executor as one folded op.
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void assign_op_ids(std::size_t& next) override;
    void clear_cache() override;

    std::size_t size() const { return children_.size(); }
    Module<T>& child(std::size_t i) { return *children_.at(i); }
    const Module<T>& child(std::size_t i) const { return *children_.at(i); }

private:
    std::vector<ModulePtr<T>> children_;
};

// relu(branch(x) + shortcut(x)); an empty shortcut is the identity.
template <typename T>
class ResidualBlock final : public Module<T> {
public:
    ResidualBlock(std::string name, std::unique_ptr<Sequential<T>> branch, std::unique_ptr<Sequential<T>> shortcut);
    Tensor<T> forward(const Tensor<T>& x, Phase phase) override;
    Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
    Tensor<T> infer(const Tensor<T>& x, MvmExecutor<T>* exec) const override;
    void collect_parameters(std::vector<Parameter<T>*>& out) override;
    void assign_op_ids(std::size_t& next) override;
    void clear_cache() override;

private:
    std::unique_ptr<Sequential<T>> branch_, shortcut_;
    Tensor<T> out_;
};

}  // namespace xbr::nn
