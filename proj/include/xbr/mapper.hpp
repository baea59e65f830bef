#pragma once

// Runs a network's conv/linear layers on crossbars: im2col lowering, tiling onto fixed-size
// arrays, input streaming and weight slicing, per-column ADC, shift-add recombination and
// differential subtraction. Everything else in the network executes digitally.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "xbr/fxp.hpp"
#include "xbr/nn/network.hpp"
#include "xbr/xbar.hpp"

namespace xbr::mapper {

enum class Backend {
    float_reference,  // no quantization, plain float conv/linear
    ideal_crossbar,
    nodal_crossbar,
    surrogate_crossbar,
};

std::string to_string(Backend b);
Backend parse_backend(const std::string& name);

struct LoweredDims {
    std::size_t rows = 0;       // MVM length, k*k*C_in
    std::size_t cols = 0;       // output channels
    std::size_t positions = 0;  // MVMs per image, H_out*W_out
    std::size_t out_height = 0;
    std::size_t out_width = 0;
};

// input_shape is (C, H, W) or (B, C, H, W). Throws ShapeError on inconsistent geometry.
LoweredDims lower_conv(const nn::ConvGeometry& g, const Shape& input_shape);

// One (positions x rows) matrix per image; row p is the input vector of output position p.
Tensor<float> lower_conv_inputs(const nn::ConvGeometry& g, const Tensor<float>& image_chw);

struct Tile {
    std::size_t grid_row = 0, grid_col = 0;
    std::size_t row_begin = 0, row_end = 0;  // logical matrix rows [begin, end)
    std::size_t col_begin = 0, col_end = 0;
};

struct TilePlan {
    std::size_t layer_id = 0;
    std::size_t rows = 0, cols = 0;  // logical matrix; cols = 2 * outputs for differential pairs
    std::size_t xbar_rows = 0, xbar_cols = 0;
    std::size_t grid_rows = 0, grid_cols = 0;
    std::size_t slices = 1;  // crossbar instances per tile
    std::vector<Tile> tiles;  // row-major over the grid

    std::size_t tile_count() const { return tiles.size(); }
    // Index of the crossbar instance holding weight slice `slice` of tile `tile`.
    std::size_t instance(std::size_t tile, std::size_t slice) const { return tile * slices + slice; }
};

TilePlan plan_tiles(std::size_t rows, std::size_t cols, std::size_t xbar_rows, std::size_t xbar_cols,
                    std::size_t layer_id = 0, std::size_t slices = 1);

struct MapperConfig {
    Backend backend = Backend::ideal_crossbar;
    fxp::PrecisionConfig precision = fxp::PrecisionConfig::cifar10();
    xbar::CrossbarConfig crossbar;
    // Crossbar transfer function for surrogate_crossbar; must match crossbar rows/cols.
    std::shared_ptr<const xbar::CrossbarModel> surrogate;

    void validate() const;
};

// A crossbar with fixed conductances, evaluated on many drive vectors at once.
class BoundCrossbar {
public:
    virtual ~BoundCrossbar() = default;
    // v: n x rows row-major volts; returns n x cols row-major amperes.
    virtual std::vector<double> mvm_batch(const std::vector<double>& v, std::size_t n) const = 0;
};

std::unique_ptr<BoundCrossbar> bind_crossbar(const xbar::ConductanceMatrix& g, const MapperConfig& config);

struct LayerTrace {
    std::size_t layer_id = 0;
    std::string name;
    Backend backend = Backend::float_reference;
    Tensor<float> z;  // layer output before the activation, (B, C, H, W) or (B, F)
};

// A conv/linear layer (batch norm already folded in) with its crossbars programmed.
struct ProgrammedLayer {
    std::size_t id = 0;
    std::string name;
    nn::OpKind kind = nn::OpKind::conv;
    nn::ConvGeometry geometry;
    Tensor<float> weight;  // conv OIHW, linear (out, in)
    std::vector<float> bias;
    TilePlan plan;
    fxp::FixedTensor weight_q;  // (rows, outputs), empty for float_reference
    // Indexed by plan.instance(tile, slice); null where the slice is all zero.
    std::vector<std::unique_ptr<BoundCrossbar>> crossbars;
    std::size_t saturated_weights = 0;
};

ProgrammedLayer program_layer(const nn::MappedOp<float>& op, const MapperConfig& config);

struct LayerOutput {
    Tensor<float> z;
    // Integer MVM result before bias, per (vector, output) at scale 2^-(I_f + W_f); crossbar
    // backends only.
    fxp::FixedTensor accumulator;
    std::size_t saturated_inputs = 0;
    std::size_t saturated_outputs = 0;
};

LayerOutput execute_layer(const ProgrammedLayer& layer, const Tensor<float>& input, const MapperConfig& config);

// Direct integer reference for a crossbar backend: quantized inputs times quantized weights,
// summed in int64 and saturated to O_bit. Same layout as LayerOutput::accumulator.
fxp::FixedTensor fixed_point_reference(const ProgrammedLayer& layer, const Tensor<float>& input,
                                       const fxp::PrecisionConfig& precision);

// A float network with every conv/linear op programmed for one backend. The network must
// outlive the mapping; later weight changes are not seen.
class MappedNetwork {
public:
    MappedNetwork(const nn::Network<float>& net, MapperConfig config);
    ~MappedNetwork();
    MappedNetwork(const MappedNetwork&) = delete;
    MappedNetwork& operator=(const MappedNetwork&) = delete;

    // Logits; when traces is non-null, one trace per mapped layer in execution order.
    // Thread-safe; the batch is split across workers.
    Tensor<float> forward(const Tensor<float>& x, std::vector<LayerTrace>* traces = nullptr) const;

    // Crossbar backends are not differentiable; the attacker only sees the digital model.
    Tensor<float> input_gradient(const Tensor<float>& x, const std::vector<int>& labels) const;

    Backend backend() const { return config_.backend; }
    const MapperConfig& config() const { return config_; }
    std::size_t layer_count() const { return layers_.size(); }
    const ProgrammedLayer& layer(std::size_t id) const { return layers_.at(id); }
    std::size_t crossbar_count() const;

private:
    class Executor;
    const nn::Network<float>& net_;
    MapperConfig config_;
    std::vector<ProgrammedLayer> layers_;
};

}  // namespace xbr::mapper
