#include "xbr/nn/layers.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "xbr/parallel.hpp"

namespace xbr::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Parameter<T> make_param(const std::string& owner, const char* suffix, Shape shape, T fill, bool trainable) {
    Parameter<T> p;
    p.name = owner + "." + suffix;
    p.value = Tensor<T>(shape, fill);
    p.grad = Tensor<T>(std::move(shape), T{0});
    p.trainable = trainable;
    return p;
}

void require_rank(const Shape& s, std::size_t rank, const std::string& who) {
    if (s.size() != rank)
        throw ShapeError(who + ": expected rank " + std::to_string(rank) + " input, got " + shape_string(s));
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

}  // namespace

// ---------------------------------------------------------------------------- Normalize

template <typename T>
Normalize<T>::Normalize(std::string name, std::vector<T> mean, std::vector<T> stddev) : Module<T>(std::move(name)) {
    if (mean.size() != stddev.size()) throw ShapeError("normalize: mean/std length mismatch");
    const std::size_t c = mean.size();
    mean_ = make_param<T>(this->name(), "mean", {c}, T{0}, false);
    std_ = make_param<T>(this->name(), "std", {c}, T{1}, false);
    std::copy(mean.begin(), mean.end(), mean_.value.data());
    std::copy(stddev.begin(), stddev.end(), std_.value.data());
}

template <typename T>
Tensor<T> Normalize<T>::forward(const Tensor<T>& x, Phase) {
    return infer(x, nullptr);
}

template <typename T>
Tensor<T> Normalize<T>::backward(const Tensor<T>& grad_out, bool) {
    Tensor<T> g = grad_out;
    const std::size_t b = g.dim(0), c = g.dim(1), hw = g.size() / (b * c);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* p = g.data() + (n * c + ch) * hw;
            const T inv = T{1} / std_.value[ch];
            for (std::size_t k = 0; k < hw; ++k) p[k] *= inv;
        }
    return g;
}

template <typename T>
Tensor<T> Normalize<T>::infer(const Tensor<T>& x, MvmExecutor<T>*) const {
    require_rank(x.shape(), 4, "normalize");
    if (x.dim(1) != mean_.value.size()) throw ShapeError("normalize: channel count mismatch");
    Tensor<T> y = x;
    const std::size_t b = y.dim(0), c = y.dim(1), hw = y.size() / (b * c);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* p = y.data() + (n * c + ch) * hw;
            const T m = mean_.value[ch], inv = T{1} / std_.value[ch];
            for (std::size_t k = 0; k < hw; ++k) p[k] = (p[k] - m) * inv;
        }
    return y;
}

template <typename T>
void Normalize<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&mean_);
    out.push_back(&std_);
}

// ---------------------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, ConvGeometry geometry, bool with_bias)
    : Module<T>(std::move(name)), geometry_(geometry), has_bias_(with_bias) {
    weight_ = make_param<T>(this->name(), "weight",
                            {geometry.out_channels, geometry.in_channels, geometry.kernel, geometry.kernel}, T{0}, true);
    weight_.fan_in = geometry.patch_length();
    if (has_bias_) bias_ = make_param<T>(this->name(), "bias", {geometry.out_channels}, T{0}, true);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Phase) {
    require_rank(x.shape(), 4, "conv " + this->name());
    const auto& g = geometry_;
    if (x.dim(1) != g.in_channels) throw ShapeError("conv " + this->name() + ": channel mismatch " + shape_string(x.shape()));
    const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = g.out_extent(h), wo = g.out_extent(w), p = ho * wo, k = g.patch_length();
    in_shape_ = x.shape();
    if (cols_.shape() != Shape{b, k, p}) cols_ = Tensor<T>({b, k, p});
    Tensor<T> y({b, g.out_channels, ho, wo});
    Eigen::Map<const RowMat<T>> wm(weight_.value.data(), static_cast<Eigen::Index>(g.out_channels),
                                   static_cast<Eigen::Index>(k));
    parallel_chunks(b, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t n = lo; n < hi; ++n) {
            T* cols = cols_.data() + n * k * p;
            im2col(x.data() + n * g.in_channels * h * w, h, w, g, cols);
            Eigen::Map<const RowMat<T>> cm(cols, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
            Eigen::Map<RowMat<T>> ym(y.data() + n * g.out_channels * p, static_cast<Eigen::Index>(g.out_channels),
                                     static_cast<Eigen::Index>(p));
            ym.noalias() = wm * cm;
            if (has_bias_)
                for (std::size_t o = 0; o < g.out_channels; ++o)
                    ym.row(static_cast<Eigen::Index>(o)).array() += bias_.value[o];
        }
    });
    return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
    const auto& g = geometry_;
    const std::size_t b = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
    const std::size_t p = g.out_extent(h) * g.out_extent(w), k = g.patch_length();
    if (grad_out.size() != b * g.out_channels * p) throw ShapeError("conv backward: gradient shape mismatch");
    Tensor<T> dx(in_shape_);
    Eigen::Map<const RowMat<T>> wm(weight_.value.data(), static_cast<Eigen::Index>(g.out_channels),
                                   static_cast<Eigen::Index>(k));
    const std::size_t chunks = chunk_count(b);
    std::vector<RowMat<T>> dw(chunks);
    std::vector<std::vector<T>> db(chunks);
    parallel_chunks(b, [&](std::size_t c, std::size_t lo, std::size_t hi) {
        if (param_grads) {
            dw[c] = RowMat<T>::Zero(static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(k));
            db[c].assign(g.out_channels, T{0});
        }
        RowMat<T> dcols(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
        for (std::size_t n = lo; n < hi; ++n) {
            Eigen::Map<const RowMat<T>> dy(grad_out.data() + n * g.out_channels * p,
                                           static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(p));
            Eigen::Map<const RowMat<T>> cm(cols_.data() + n * k * p, static_cast<Eigen::Index>(k),
                                           static_cast<Eigen::Index>(p));
            if (param_grads) {
                dw[c].noalias() += dy * cm.transpose();
                if (has_bias_)
                    for (std::size_t o = 0; o < g.out_channels; ++o) db[c][o] += dy.row(static_cast<Eigen::Index>(o)).sum();
            }
            dcols.noalias() = wm.transpose() * dy;
            col2im(dcols.data(), h, w, g, dx.data() + n * g.in_channels * h * w);
        }
    });
    if (param_grads) {
        Eigen::Map<RowMat<T>> gw(weight_.grad.data(), static_cast<Eigen::Index>(g.out_channels),
                                 static_cast<Eigen::Index>(k));
        for (std::size_t c = 0; c < chunks; ++c) {
            gw += dw[c];
            if (has_bias_)
                for (std::size_t o = 0; o < g.out_channels; ++o) bias_.grad[o] += db[c][o];
        }
    }
    return dx;
}

template <typename T>
Tensor<T> Conv2d<T>::infer(const Tensor<T>& x, MvmExecutor<T>* exec) const {
    if (exec) {
        MappedOp<T> op;
        op.id = op_id_;
        op.kind = OpKind::conv;
        op.geometry = geometry_;
        op.weight = &weight_.value;
        if (has_bias_) op.bias = bias_.value.values();
        op.name = this->name();
        return exec->run(op, x);
    }
    return conv2d(x, weight_.value, has_bias_ ? bias_.value.values() : std::span<const T>{}, geometry_);
}

template <typename T>
void Conv2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

template <typename T>
void Conv2d<T>::clear_cache() {
    cols_ = {};
}

// ---------------------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, std::size_t channels, T momentum, T eps)
    : Module<T>(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_ = make_param<T>(this->name(), "gamma", {channels}, T{1}, true);
    beta_ = make_param<T>(this->name(), "beta", {channels}, T{0}, true);
    running_mean_ = make_param<T>(this->name(), "running_mean", {channels}, T{0}, false);
    running_var_ = make_param<T>(this->name(), "running_var", {channels}, T{1}, false);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Phase phase) {
    require_rank(x.shape(), 4, "batchnorm " + this->name());
    if (x.dim(1) != channels_) throw ShapeError("batchnorm " + this->name() + ": channel mismatch");
    const std::size_t b = x.dim(0), hw = x.dim(2) * x.dim(3);
    const std::size_t count = b * hw;
    batch_stats_ = phase != Phase::eval;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(channels_, T{0});
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
        T mean, var;
        if (batch_stats_) {
            double s = 0.0;
            for (std::size_t n = 0; n < b; ++n) {
                const T* p = x.data() + (n * channels_ + c) * hw;
                for (std::size_t k = 0; k < hw; ++k) s += p[k];
            }
            const double m = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t n = 0; n < b; ++n) {
                const T* p = x.data() + (n * channels_ + c) * hw;
                for (std::size_t k = 0; k < hw; ++k) v += (p[k] - m) * (p[k] - m);
            }
            v /= static_cast<double>(count);
            mean = static_cast<T>(m);
            var = static_cast<T>(v);
            if (phase == Phase::train) {
                const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
                running_mean_.value[c] = (T{1} - momentum_) * running_mean_.value[c] + momentum_ * mean;
                running_var_.value[c] =
                    (T{1} - momentum_) * running_var_.value[c] + momentum_ * static_cast<T>(unbiased);
            }
        } else {
            mean = running_mean_.value[c];
            var = running_var_.value[c];
        }
        const T inv = T{1} / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        const T gm = gamma_.value[c], bt = beta_.value[c];
        for (std::size_t n = 0; n < b; ++n) {
            const std::size_t off = (n * channels_ + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                const T xh = (x[off + k] - mean) * inv;
                xhat_[off + k] = xh;
                y[off + k] = gm * xh + bt;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
    const std::size_t b = grad_out.dim(0), hw = grad_out.dim(2) * grad_out.dim(3);
    const auto count = static_cast<T>(b * hw);
    Tensor<T> dx(grad_out.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
        T sum_dy{0}, sum_dy_xh{0};
        for (std::size_t n = 0; n < b; ++n) {
            const std::size_t off = (n * channels_ + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                sum_dy += grad_out[off + k];
                sum_dy_xh += grad_out[off + k] * xhat_[off + k];
            }
        }
        if (param_grads) {
            gamma_.grad[c] += sum_dy_xh;
            beta_.grad[c] += sum_dy;
        }
        const T scale = gamma_.value[c] * inv_std_[c];
        for (std::size_t n = 0; n < b; ++n) {
            const std::size_t off = (n * channels_ + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                if (batch_stats_)
                    dx[off + k] = scale * (grad_out[off + k] - sum_dy / count - xhat_[off + k] * sum_dy_xh / count);
                else
                    dx[off + k] = scale * grad_out[off + k];
            }
        }
    }
    return dx;
}

template <typename T>
void BatchNorm2d<T>::folded(std::vector<T>& scale, std::vector<T>& shift) const {
    scale.resize(channels_);
    shift.resize(channels_);
    for (std::size_t c = 0; c < channels_; ++c) {
        scale[c] = gamma_.value[c] / std::sqrt(running_var_.value[c] + eps_);
        shift[c] = beta_.value[c] - running_mean_.value[c] * scale[c];
    }
}

template <typename T>
Tensor<T> BatchNorm2d<T>::infer(const Tensor<T>& x, MvmExecutor<T>*) const {
    require_rank(x.shape(), 4, "batchnorm " + this->name());
    if (x.dim(1) != channels_) throw ShapeError("batchnorm " + this->name() + ": channel mismatch");
    std::vector<T> scale, shift;
    folded(scale, shift);
    Tensor<T> y = x;
    const std::size_t b = x.dim(0), hw = x.dim(2) * x.dim(3);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t c = 0; c < channels_; ++c) {
            T* p = y.data() + (n * channels_ + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) p[k] = p[k] * scale[c] + shift[c];
        }
    return y;
}

template <typename T>
void BatchNorm2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

template <typename T>
void BatchNorm2d<T>::clear_cache() {
    xhat_ = {};
}

// ---------------------------------------------------------------------------- ReLU, pooling, flatten

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Phase) {
    out_ = infer(x, nullptr);
    return out_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out, bool) {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (out_[i] <= T{0}) g[i] = T{0};
    return g;
}

template <typename T>
Tensor<T> ReLU<T>::infer(const Tensor<T>& x, MvmExecutor<T>*) const {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T{0} ? v : T{0};
    return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Phase) {
    in_shape_ = x.shape();
    return infer(x, nullptr);
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out, bool) {
    const std::size_t b = in_shape_[0], c = in_shape_[1], hw = in_shape_[2] * in_shape_[3];
    Tensor<T> dx(in_shape_);
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T g = grad_out[n * c + ch] * inv;
            T* p = dx.data() + (n * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) p[k] = g;
        }
    return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::infer(const Tensor<T>& x, MvmExecutor<T>*) const {
    require_rank(x.shape(), 4, "avgpool");
    const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({b, c});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = x.data() + (n * c + ch) * hw;
            T s{0};
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
            y[n * c + ch] = s / static_cast<T>(hw);
        }
    return y;
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, Phase) {
    in_shape_ = x.shape();
    return infer(x, nullptr);
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out, bool) {
    return grad_out.reshaped(in_shape_);
}

template <typename T>
Tensor<T> Flatten<T>::infer(const Tensor<T>& x, MvmExecutor<T>*) const {
    if (x.rank() < 1) throw ShapeError("flatten: scalar input");
    return x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(1, x.dim(0))});
}

// ---------------------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in_features, std::size_t out_features, bool with_bias)
    : Module<T>(std::move(name)), in_features_(in_features), out_features_(out_features), has_bias_(with_bias) {
    weight_ = make_param<T>(this->name(), "weight", {out_features, in_features}, T{0}, true);
    weight_.fan_in = in_features;
    if (has_bias_) bias_ = make_param<T>(this->name(), "bias", {out_features}, T{0}, true);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Phase) {
    in_ = x;
    return linear(x, weight_.value, has_bias_ ? bias_.value.values() : std::span<const T>{});
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
    const std::size_t b = in_.dim(0);
    const auto eb = static_cast<Eigen::Index>(b), ein = static_cast<Eigen::Index>(in_features_),
               eout = static_cast<Eigen::Index>(out_features_);
    Eigen::Map<const RowMat<T>> dy(grad_out.data(), eb, eout);
    Eigen::Map<const RowMat<T>> xm(in_.data(), eb, ein);
    Eigen::Map<const RowMat<T>> wm(weight_.value.data(), eout, ein);
    if (param_grads) {
        Eigen::Map<RowMat<T>> gw(weight_.grad.data(), eout, ein);
        gw.noalias() += dy.transpose() * xm;
        if (has_bias_)
            for (std::size_t o = 0; o < out_features_; ++o) bias_.grad[o] += dy.col(static_cast<Eigen::Index>(o)).sum();
    }
    Tensor<T> dx({b, in_features_});
    Eigen::Map<RowMat<T>> dxm(dx.data(), eb, ein);
    dxm.noalias() = dy * wm;
    return dx;
}

template <typename T>
Tensor<T> Linear<T>::infer(const Tensor<T>& x, MvmExecutor<T>* exec) const {
    if (exec) {
        MappedOp<T> op;
        op.id = op_id_;
        op.kind = OpKind::linear;
        op.geometry = ConvGeometry{in_features_, out_features_, 1, 1, 0};
        op.weight = &weight_.value;
        if (has_bias_) op.bias = bias_.value.values();
        op.name = this->name();
        return exec->run(op, x);
    }
    return linear(x, weight_.value, has_bias_ ? bias_.value.values() : std::span<const T>{});
}

template <typename T>
void Linear<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------- Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Phase phase) {
    Tensor<T> y = x;
    for (auto& c : children_) y = c->forward(y, phase);
    return y;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
    Tensor<T> g = grad_out;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = (*it)->backward(g, param_grads);
    return g;
}

template <typename T>
Tensor<T> Sequential<T>::infer(const Tensor<T>& x, MvmExecutor<T>* exec) const {
    Tensor<T> y = x;
    for (std::size_t i = 0; i < children_.size(); ++i) {
        const auto* conv = exec ? dynamic_cast<const Conv2d<T>*>(children_[i].get()) : nullptr;
        const auto* bn = conv && i + 1 < children_.size()
                             ? dynamic_cast<const BatchNorm2d<T>*>(children_[i + 1].get())
                             : nullptr;
        if (!bn) {
            y = children_[i]->infer(y, exec);
            continue;
        }
        // conv -> bn folded into one affine op: W' = W * s, b' = (b - mean) * s + beta.
        std::vector<T> scale, shift;
        bn->folded(scale, shift);
        const auto& g = conv->geometry();
        Tensor<T> w = conv->weight().value;
        const std::size_t per_out = g.patch_length();
        std::vector<T> bias(g.out_channels);
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            for (std::size_t k = 0; k < per_out; ++k) w[o * per_out + k] *= scale[o];
            bias[o] = shift[o] + (conv->has_bias() ? conv->bias().value[o] * scale[o] : T{0});
        }
        MappedOp<T> op;
        op.id = conv->op_id();
        op.kind = OpKind::conv;
        op.geometry = g;
        op.weight = &w;
        op.bias = bias;
        op.name = conv->name();
        y = exec->run(op, y);
        ++i;
    }
    return y;
}

template <typename T>
void Sequential<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
    for (auto& c : children_) c->collect_parameters(out);
}

template <typename T>
void Sequential<T>::assign_op_ids(std::size_t& next) {
    for (auto& c : children_) c->assign_op_ids(next);
}

template <typename T>
void Sequential<T>::clear_cache() {
    for (auto& c : children_) c->clear_cache();
}

// ---------------------------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(std::string name, std::unique_ptr<Sequential<T>> branch,
                                std::unique_ptr<Sequential<T>> shortcut)
    : Module<T>(std::move(name)), branch_(std::move(branch)), shortcut_(std::move(shortcut)) {}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Phase phase) {
    Tensor<T> y = branch_->forward(x, phase);
    Tensor<T> s = shortcut_ ? shortcut_->forward(x, phase) : x;
    if (s.shape() != y.shape())
        throw ShapeError("residual " + this->name() + ": branch " + shape_string(y.shape()) + " vs shortcut " +
                         shape_string(s.shape()));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i] + s[i], T{0});
    out_ = y;
    return y;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (out_[i] <= T{0}) g[i] = T{0};
    Tensor<T> dx = branch_->backward(g, param_grads);
    if (shortcut_)
        add_into(dx, shortcut_->backward(g, param_grads));
    else
        add_into(dx, g);
    return dx;
}

template <typename T>
Tensor<T> ResidualBlock<T>::infer(const Tensor<T>& x, MvmExecutor<T>* exec) const {
    Tensor<T> y = branch_->infer(x, exec);
    Tensor<T> s = shortcut_ ? shortcut_->infer(x, exec) : x;
    if (s.shape() != y.shape()) throw ShapeError("residual " + this->name() + ": branch/shortcut shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i] + s[i], T{0});
    return y;
}

template <typename T>
void ResidualBlock<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
    branch_->collect_parameters(out);
    if (shortcut_) shortcut_->collect_parameters(out);
}

template <typename T>
void ResidualBlock<T>::assign_op_ids(std::size_t& next) {
    branch_->assign_op_ids(next);
    if (shortcut_) shortcut_->assign_op_ids(next);
}

template <typename T>
void ResidualBlock<T>::clear_cache() {
    branch_->clear_cache();
    if (shortcut_) shortcut_->clear_cache();
    out_ = {};
}

#define XBR_INSTANTIATE_LAYERS(T)         \
    template class Normalize<T>;          \
    template class Conv2d<T>;             \
    template class BatchNorm2d<T>;        \
    template class ReLU<T>;               \
    template class GlobalAvgPool<T>;      \
    template class Flatten<T>;            \
    template class Linear<T>;             \
    template class Sequential<T>;         \
    template class ResidualBlock<T>;

XBR_INSTANTIATE_LAYERS(float)
XBR_INSTANTIATE_LAYERS(double)

}  // namespace xbr::nn
