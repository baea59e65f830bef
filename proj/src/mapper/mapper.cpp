#include "xbr/mapper.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "xbr/error.hpp"
#include "xbr/parallel.hpp"
#include "xbr/surrogate.hpp"

namespace xbr::mapper {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Drive vectors through a fixed transfer matrix: ideal G, or the nodal effective matrix.
class GemmCrossbar final : public BoundCrossbar {
public:
    explicit GemmCrossbar(const xbar::ConductanceMatrix& t)
        : t_(Eigen::Map<const RowMat>(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                                      static_cast<Eigen::Index>(t.cols()))) {}

    std::vector<double> mvm_batch(const std::vector<double>& v, std::size_t n) const override {
        std::vector<double> out(n * static_cast<std::size_t>(t_.cols()));
        Eigen::Map<const RowMat> vm(v.data(), static_cast<Eigen::Index>(n), t_.rows());
        Eigen::Map<RowMat> om(out.data(), static_cast<Eigen::Index>(n), t_.cols());
        om.noalias() = vm * t_;
        return out;
    }

private:
    RowMat t_;
};

// Any transfer function, one drive vector at a time.
class ModelCrossbar final : public BoundCrossbar {
public:
    ModelCrossbar(xbar::ConductanceMatrix g, std::shared_ptr<const xbar::CrossbarModel> model)
        : g_(std::move(g)), model_(std::move(model)) {}

    std::vector<double> mvm_batch(const std::vector<double>& v, std::size_t n) const override {
        const std::size_t rows = g_.rows(), cols = g_.cols();
        std::vector<double> out(n * cols);
        for (std::size_t k = 0; k < n; ++k) {
            auto i = model_->mvm(std::span<const double>(v.data() + k * rows, rows), g_);
            std::copy(i.begin(), i.end(), out.begin() + static_cast<std::ptrdiff_t>(k * cols));
        }
        return out;
    }

private:
    xbar::ConductanceMatrix g_;
    std::shared_ptr<const xbar::CrossbarModel> model_;
};

struct QuantizedLowering {
    fxp::FixedTensor lowered;  // (vectors, rows)
    std::size_t images = 0;
    std::size_t positions = 0;  // vectors per image
    std::size_t saturated = 0;
};

std::size_t layer_rows(const ProgrammedLayer& l) {
    return l.kind == nn::OpKind::conv ? l.geometry.patch_length() : l.geometry.in_channels;
}

// Quantizes the layer input and lowers it to integer MVM vectors, image-major.
QuantizedLowering quantize_and_lower(const ProgrammedLayer& layer, const Tensor<float>& input,
                                     const fxp::PrecisionConfig& p) {
    QuantizedLowering q;
    const auto& g = layer.geometry;
    const std::size_t rows = layer_rows(layer);
    auto xq = fxp::quantize(input.values(), input.shape(), p.input_bits, p.input_integer_bits);
    q.saturated = xq.saturated;
    if (layer.kind == nn::OpKind::linear) {
        if (input.rank() != 2 || input.dim(1) != rows)
            throw ShapeError("layer " + layer.name + ": expected (B," + std::to_string(rows) + ") input, got " +
                             shape_string(input.shape()));
        q.images = input.dim(0);
        q.positions = 1;
        q.lowered = std::move(xq);
        q.lowered.shape = {q.images, rows};
        return q;
    }
    const auto dims = lower_conv(g, input.shape());
    const std::size_t b = input.dim(0), h = input.dim(2), w = input.dim(3);
    q.images = b;
    q.positions = dims.positions;
    q.lowered.bits = xq.bits;
    q.lowered.fraction_bits = xq.fraction_bits;
    q.lowered.shape = {b * dims.positions, rows};
    q.lowered.raw.assign(b * dims.positions * rows, 0);
    const std::size_t k = g.kernel;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t oy = 0; oy < dims.out_height; ++oy)
            for (std::size_t ox = 0; ox < dims.out_width; ++ox) {
                std::int64_t* dst = q.lowered.raw.data() + ((n * dims.positions) + oy * dims.out_width + ox) * rows;
                std::size_t r = 0;
                for (std::size_t c = 0; c < g.in_channels; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx, ++r) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                            static_cast<std::ptrdiff_t>(g.padding);
                            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                            static_cast<std::ptrdiff_t>(g.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                                ix >= static_cast<std::ptrdiff_t>(w))
                                continue;
                            dst[r] = xq.raw[((n * g.in_channels + c) * h + static_cast<std::size_t>(iy)) * w +
                                            static_cast<std::size_t>(ix)];
                        }
            }
    return q;
}

// Crossbar MVM of a block of integer input vectors; returns (vectors, logical cols) int64.
std::vector<std::int64_t> crossbar_block(const ProgrammedLayer& layer, const fxp::FixedTensor& lowered,
                                         std::size_t begin, std::size_t count, const MapperConfig& cfg) {
    const auto& p = cfg.precision;
    const auto& plan = layer.plan;
    const std::size_t rows = plan.rows, cols = plan.cols, n_rows = plan.xbar_rows, n_cols = plan.xbar_cols;
    const std::size_t streams = static_cast<std::size_t>(p.input_streams());
    const int iw = p.input_stream_width;
    const double level_max = static_cast<double>((1 << iw) - 1);
    const double v_step = cfg.crossbar.v_max / level_max;
    const double g_min = cfg.crossbar.g_min();
    const double unit = v_step * (cfg.crossbar.g_max() - g_min) / static_cast<double>((1 << p.weight_slice_width) - 1);

    fxp::FixedTensor block;
    block.bits = lowered.bits;
    block.fraction_bits = lowered.fraction_bits;
    block.shape = {count, rows};
    block.raw.assign(lowered.raw.begin() + static_cast<std::ptrdiff_t>(begin * rows),
                     lowered.raw.begin() + static_cast<std::ptrdiff_t>((begin + count) * rows));
    const auto planes = fxp::stream_inputs(block, iw);

    std::vector<std::int64_t> acc(count * cols, 0);
    std::vector<double> v(streams * count * n_rows);
    std::vector<double> v_sum(streams * count);
    for (std::size_t gr = 0; gr < plan.grid_rows; ++gr) {
        const Tile& first = plan.tiles[gr * plan.grid_cols];
        const std::size_t r0 = first.row_begin, tr = first.row_end - first.row_begin;
        std::fill(v.begin(), v.end(), 0.0);
        for (std::size_t a = 0; a < streams; ++a)
            for (std::size_t k = 0; k < count; ++k) {
                double* row = v.data() + (a * count + k) * n_rows;
                double s = 0.0;
                for (std::size_t i = 0; i < tr; ++i) {
                    row[i] = static_cast<double>(planes.plane_value(a, k * rows + r0 + i)) * v_step;
                    s += row[i];
                }
                v_sum[a * count + k] = s;
            }
        for (std::size_t gc = 0; gc < plan.grid_cols; ++gc) {
            const std::size_t t = gr * plan.grid_cols + gc;
            const Tile& tile = plan.tiles[t];
            const std::size_t tc = tile.col_end - tile.col_begin;
            fxp::PartialSums partials(streams, plan.slices, count * tc);
            for (std::size_t b = 0; b < plan.slices; ++b) {
                const auto& xbar = layer.crossbars[plan.instance(t, b)];
                if (!xbar) continue;
                std::vector<double> current;
                try {
                    current = xbar->mvm_batch(v, streams * count);
                } catch (const Error& e) {
                    throw NumericalError("layer " + layer.name + " tile (" + std::to_string(tile.grid_row) + "," +
                                         std::to_string(tile.grid_col) + ") slice " + std::to_string(b) + ": " +
                                         e.what());
                }
                for (std::size_t a = 0; a < streams; ++a)
                    for (std::size_t k = 0; k < count; ++k) {
                        const double* i_row = current.data() + (a * count + k) * n_cols;
                        const double offset = g_min * v_sum[a * count + k];
                        for (std::size_t j = 0; j < tc; ++j) {
                            const double level = (i_row[j] - offset) / unit;
                            if (!std::isfinite(level))
                                throw NumericalError("layer " + layer.name + " tile (" +
                                                     std::to_string(tile.grid_row) + "," +
                                                     std::to_string(tile.grid_col) + ") slice " + std::to_string(b) +
                                                     ": non-finite column current");
                            partials.at(a, b, k * tc + j) = std::llround(level);
                        }
                    }
            }
            const auto summed = fxp::shift_add_recombine(partials, iw, p.weight_slice_width);
            for (std::size_t k = 0; k < count; ++k)
                for (std::size_t j = 0; j < tc; ++j) acc[k * cols + tile.col_begin + j] += summed[k * tc + j];
        }
    }
    return acc;
}

}  // namespace

std::string to_string(Backend b) {
    switch (b) {
        case Backend::float_reference: return "float_reference";
        case Backend::ideal_crossbar: return "ideal_crossbar";
        case Backend::nodal_crossbar: return "nodal_crossbar";
        case Backend::surrogate_crossbar: return "surrogate_crossbar";
    }
    return "unknown";
}

Backend parse_backend(const std::string& name) {
    if (name == "float_reference" || name == "float" || name == "digital") return Backend::float_reference;
    if (name == "ideal_crossbar" || name == "ideal") return Backend::ideal_crossbar;
    if (name == "nodal_crossbar" || name == "nodal") return Backend::nodal_crossbar;
    if (name == "surrogate_crossbar" || name == "surrogate") return Backend::surrogate_crossbar;
    throw ConfigError("unknown backend '" + name +
                      "' (expected float_reference, ideal_crossbar, nodal_crossbar or surrogate_crossbar)");
}

LoweredDims lower_conv(const nn::ConvGeometry& g, const Shape& input_shape) {
    if (input_shape.size() != 3 && input_shape.size() != 4)
        throw ShapeError("lower_conv: expected (C,H,W) or (B,C,H,W), got " + shape_string(input_shape));
    const std::size_t off = input_shape.size() - 3;
    if (input_shape[off] != g.in_channels)
        throw ShapeError("lower_conv: input has " + std::to_string(input_shape[off]) + " channels, conv expects " +
                         std::to_string(g.in_channels));
    LoweredDims d;
    d.rows = g.patch_length();
    d.cols = g.out_channels;
    d.out_height = g.out_extent(input_shape[off + 1]);
    d.out_width = g.out_extent(input_shape[off + 2]);
    d.positions = d.out_height * d.out_width;
    return d;
}

Tensor<float> lower_conv_inputs(const nn::ConvGeometry& g, const Tensor<float>& image) {
    const auto d = lower_conv(g, image.shape());
    if (image.rank() != 3) throw ShapeError("lower_conv_inputs: expected one (C,H,W) image");
    std::vector<float> cols(d.rows * d.positions);
    nn::im2col(image.data(), image.dim(1), image.dim(2), g, cols.data());
    Tensor<float> out({d.positions, d.rows});
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t p = 0; p < d.positions; ++p) out[p * d.rows + r] = cols[r * d.positions + p];
    return out;
}

TilePlan plan_tiles(std::size_t rows, std::size_t cols, std::size_t xbar_rows, std::size_t xbar_cols,
                    std::size_t layer_id, std::size_t slices) {
    if (rows == 0 || cols == 0 || xbar_rows == 0 || xbar_cols == 0 || slices == 0)
        throw ShapeError("plan_tiles: dimensions must be >= 1");
    TilePlan plan;
    plan.layer_id = layer_id;
    plan.rows = rows;
    plan.cols = cols;
    plan.xbar_rows = xbar_rows;
    plan.xbar_cols = xbar_cols;
    plan.slices = slices;
    plan.grid_rows = ceil_div(rows, xbar_rows);
    plan.grid_cols = ceil_div(cols, xbar_cols);
    for (std::size_t r = 0; r < plan.grid_rows; ++r)
        for (std::size_t c = 0; c < plan.grid_cols; ++c)
            plan.tiles.push_back({r, c, r * xbar_rows, std::min(rows, (r + 1) * xbar_rows), c * xbar_cols,
                                  std::min(cols, (c + 1) * xbar_cols)});
    return plan;
}

void MapperConfig::validate() const {
    precision.validate();
    crossbar.validate();
    if (backend == Backend::surrogate_crossbar) {
        if (!surrogate) throw ConfigError("surrogate_crossbar backend needs a fitted surrogate model");
        if (const auto* s = dynamic_cast<const xbar::SurrogateModel*>(surrogate.get()))
            if (s->rows() != crossbar.rows || s->cols() != crossbar.cols)
                throw ConfigError("surrogate was fitted for " + std::to_string(s->rows()) + "x" +
                                  std::to_string(s->cols()) + " crossbars, mapping uses " +
                                  std::to_string(crossbar.rows) + "x" + std::to_string(crossbar.cols));
    }
}

std::unique_ptr<BoundCrossbar> bind_crossbar(const xbar::ConductanceMatrix& g, const MapperConfig& config) {
    switch (config.backend) {
        case Backend::ideal_crossbar: return std::make_unique<GemmCrossbar>(g);
        case Backend::nodal_crossbar:
            if (config.crossbar.device == xbar::DeviceLaw::linear)
                return std::make_unique<GemmCrossbar>(xbar::nodal_transfer_matrix(g, config.crossbar));
            return std::make_unique<ModelCrossbar>(g, std::make_shared<xbar::NodalModel>(config.crossbar));
        case Backend::surrogate_crossbar: return std::make_unique<ModelCrossbar>(g, config.surrogate);
        case Backend::float_reference: break;
    }
    throw UnsupportedOperation("float_reference backend has no crossbars");
}

ProgrammedLayer program_layer(const nn::MappedOp<float>& op, const MapperConfig& config) {
    if (!op.weight) throw MappingError("program_layer: op " + op.name + " has no weights");
    ProgrammedLayer l;
    l.id = op.id;
    l.name = op.name;
    l.kind = op.kind;
    l.geometry = op.geometry;
    l.weight = *op.weight;
    l.bias.assign(op.bias.begin(), op.bias.end());
    const std::size_t rows = layer_rows(l), outs = l.geometry.out_channels;
    if (l.weight.size() != rows * outs)
        throw ShapeError("program_layer: weight of " + op.name + " has shape " + shape_string(l.weight.shape()));
    if (!l.bias.empty() && l.bias.size() != outs) throw ShapeError("program_layer: bias length mismatch in " + op.name);
    const auto& p = config.precision;
    if (config.backend == Backend::float_reference) {
        l.plan = plan_tiles(rows, 2 * outs, config.crossbar.rows, config.crossbar.cols, l.id, 1);
        return l;
    }
    std::vector<float> wmat(rows * outs);
    for (std::size_t o = 0; o < outs; ++o)
        for (std::size_t r = 0; r < rows; ++r) wmat[r * outs + o] = l.weight[o * rows + r];
    l.weight_q = fxp::quantize(wmat, {rows, outs}, p.weight_bits, p.weight_integer_bits);
    l.saturated_weights = l.weight_q.saturated;
    const auto sliced = fxp::slice_weights(l.weight_q, p.weight_slice_width);
    l.plan = plan_tiles(rows, 2 * outs, config.crossbar.rows, config.crossbar.cols, l.id,
                        static_cast<std::size_t>(p.weight_slices()));
    l.crossbars.resize(l.plan.tile_count() * l.plan.slices);
    std::vector<std::uint16_t> levels;
    for (std::size_t t = 0; t < l.plan.tile_count(); ++t) {
        const Tile& tile = l.plan.tiles[t];
        const std::size_t tr = tile.row_end - tile.row_begin, tc = tile.col_end - tile.col_begin;
        for (std::size_t b = 0; b < l.plan.slices; ++b) {
            levels.assign(tr * tc, 0);
            for (std::size_t i = 0; i < tr; ++i)
                for (std::size_t j = 0; j < tc; ++j) {
                    const std::size_t c = tile.col_begin + j;
                    const std::size_t element = (tile.row_begin + i) * outs + c / 2;
                    const auto& set = (c % 2 == 0) ? sliced.positive : sliced.negative;
                    levels[i * tc + j] = set.planes[b][element];
                }
            // An all-zero slice contributes nothing and is never programmed.
            if (std::all_of(levels.begin(), levels.end(), [](std::uint16_t s) { return s == 0; })) continue;
            const auto g = xbar::program(levels, tr, tc, p.weight_slice_width, config.crossbar);
            l.crossbars[l.plan.instance(t, b)] = bind_crossbar(g, config);
        }
    }
    return l;
}

LayerOutput execute_layer(const ProgrammedLayer& layer, const Tensor<float>& input, const MapperConfig& config) {
    LayerOutput out;
    const std::span<const float> bias(layer.bias);
    if (config.backend == Backend::float_reference) {
        out.z = layer.kind == nn::OpKind::conv ? nn::conv2d(input, layer.weight, bias, layer.geometry)
                                               : nn::linear(input, layer.weight, bias);
        return out;
    }
    const auto& p = config.precision;
    const std::size_t outs = layer.geometry.out_channels, cols = layer.plan.cols;
    auto q = quantize_and_lower(layer, input, p);
    out.saturated_inputs = q.saturated;
    const std::size_t vectors = q.images * q.positions;
    // One image worth of MVM vectors per crossbar call keeps the drive matrix small.
    const std::size_t block = layer.kind == nn::OpKind::conv ? q.positions : vectors;

    auto& acc = out.accumulator;
    acc.bits = p.output_bits;
    acc.fraction_bits = p.output_fraction_bits();
    acc.shape = {vectors, outs};
    acc.raw.assign(vectors * outs, 0);
    for (std::size_t begin = 0; begin < vectors; begin += block) {
        const std::size_t count = std::min(block, vectors - begin);
        const auto logical = crossbar_block(layer, q.lowered, begin, count, config);
        for (std::size_t k = 0; k < count; ++k)
            for (std::size_t o = 0; o < outs; ++o) {
                const std::int64_t d = logical[k * cols + 2 * o] - logical[k * cols + 2 * o + 1];
                const std::int64_t s = fxp::saturate(d, p.output_bits);
                if (s != d) ++out.saturated_outputs;
                acc.raw[(begin + k) * outs + o] = s;
            }
    }
    acc.saturated = out.saturated_outputs;

    const double scale = acc.scale();
    if (layer.kind == nn::OpKind::linear) {
        out.z = Tensor<float>({q.images, outs});
        for (std::size_t n = 0; n < q.images; ++n)
            for (std::size_t o = 0; o < outs; ++o)
                out.z[n * outs + o] = static_cast<float>(static_cast<double>(acc.raw[n * outs + o]) * scale +
                                                         (bias.empty() ? 0.0 : bias[o]));
    } else {
        const auto d = lower_conv(layer.geometry, input.shape());
        out.z = Tensor<float>({q.images, outs, d.out_height, d.out_width});
        for (std::size_t n = 0; n < q.images; ++n)
            for (std::size_t o = 0; o < outs; ++o)
                for (std::size_t pos = 0; pos < q.positions; ++pos)
                    out.z[(n * outs + o) * q.positions + pos] = static_cast<float>(
                        static_cast<double>(acc.raw[(n * q.positions + pos) * outs + o]) * scale +
                        (bias.empty() ? 0.0 : bias[o]));
    }
    return out;
}

fxp::FixedTensor fixed_point_reference(const ProgrammedLayer& layer, const Tensor<float>& input,
                                       const fxp::PrecisionConfig& precision) {
    if (layer.weight_q.raw.empty()) throw UnsupportedOperation("fixed_point_reference: layer has no quantized weights");
    const auto q = quantize_and_lower(layer, input, precision);
    const std::size_t rows = layer_rows(layer), outs = layer.geometry.out_channels;
    const std::size_t vectors = q.images * q.positions;
    fxp::FixedTensor out;
    out.bits = precision.output_bits;
    out.fraction_bits = precision.output_fraction_bits();
    out.shape = {vectors, outs};
    out.raw.assign(vectors * outs, 0);
    for (std::size_t k = 0; k < vectors; ++k)
        for (std::size_t o = 0; o < outs; ++o) {
            std::int64_t s = 0;
            for (std::size_t r = 0; r < rows; ++r) s += q.lowered.raw[k * rows + r] * layer.weight_q.raw[r * outs + o];
            const auto clipped = fxp::saturate(s, precision.output_bits);
            if (clipped != s) ++out.saturated;
            out.raw[k * outs + o] = clipped;
        }
    return out;
}

// ---------------------------------------------------------------------------- MappedNetwork

class MappedNetwork::Executor final : public nn::MvmExecutor<float> {
public:
    Executor(const MappedNetwork& owner, std::vector<LayerTrace>* traces) : owner_(owner), traces_(traces) {}

    Tensor<float> run(const nn::MappedOp<float>& op, const Tensor<float>& input) override {
        const auto& layer = owner_.layers_.at(op.id);
        auto out = execute_layer(layer, input, owner_.config_);
        if (traces_) traces_->push_back({layer.id, layer.name, owner_.config_.backend, out.z});
        return std::move(out.z);
    }

private:
    const MappedNetwork& owner_;
    std::vector<LayerTrace>* traces_;
};

namespace {

class Programmer final : public nn::MvmExecutor<float> {
public:
    Programmer(std::vector<ProgrammedLayer>& layers, const MapperConfig& config) : layers_(layers), config_(config) {}

    Tensor<float> run(const nn::MappedOp<float>& op, const Tensor<float>& input) override {
        if (layers_.size() <= op.id) layers_.resize(op.id + 1);
        layers_[op.id] = program_layer(op, config_);
        return op.kind == nn::OpKind::conv ? nn::conv2d(input, *op.weight, op.bias, op.geometry)
                                           : nn::linear(input, *op.weight, op.bias);
    }

private:
    std::vector<ProgrammedLayer>& layers_;
    const MapperConfig& config_;
};

}  // namespace

MappedNetwork::MappedNetwork(const nn::Network<float>& net, MapperConfig config)
    : net_(net), config_(std::move(config)) {
    config_.validate();
    const auto& s = net.spec();
    Programmer programmer(layers_, config_);
    net.infer(Tensor<float>({1, s.in_channels, s.image_size, s.image_size}), &programmer);
    if (layers_.size() != net.mapped_op_count())
        throw MappingError("mapped " + std::to_string(layers_.size()) + " layers, network declares " +
                           std::to_string(net.mapped_op_count()));
}

MappedNetwork::~MappedNetwork() = default;

std::size_t MappedNetwork::crossbar_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        n += static_cast<std::size_t>(std::count_if(l.crossbars.begin(), l.crossbars.end(), [](const auto& c) { return c != nullptr; }));
    return n;
}

Tensor<float> MappedNetwork::forward(const Tensor<float>& x, std::vector<LayerTrace>* traces) const {
    if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("mapped forward: empty batch");
    const std::size_t chunks = chunk_count(x.dim(0));
    std::vector<Tensor<float>> logits(chunks);
    std::vector<std::vector<LayerTrace>> chunk_traces(chunks);
    parallel_chunks(x.dim(0), [&](std::size_t c, std::size_t begin, std::size_t end) {
        Executor exec(*this, traces ? &chunk_traces[c] : nullptr);
        logits[c] = net_.infer(x.slice_batch(begin, end), &exec);
    });
    if (traces) {
        traces->clear();
        const std::size_t per_chunk = chunk_traces.front().size();
        for (std::size_t i = 0; i < per_chunk; ++i) {
            std::vector<Tensor<float>> parts;
            for (auto& ct : chunk_traces) parts.push_back(std::move(ct[i].z));
            auto& first = chunk_traces.front()[i];
            traces->push_back({first.layer_id, first.name, first.backend, concat_batch(parts)});
        }
    }
    return concat_batch(logits);
}

Tensor<float> MappedNetwork::input_gradient(const Tensor<float>&, const std::vector<int>&) const {
    throw UnsupportedOperation("input gradients are only available on the float network (backend " +
                               to_string(config_.backend) + ")");
}

}  // namespace xbr::mapper
