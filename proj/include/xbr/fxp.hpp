#pragma once

// Fixed-point tensors plus the bit-slicing (weights) and bit-streaming (inputs)
// decomposition used to run high-precision MVMs on low-precision crossbar cells.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xbr::fxp {

struct PrecisionConfig {
    int input_stream_width = 4;    // I_w
    int weight_slice_width = 4;    // W_w
    int input_bits = 16;           // I_bit
    int weight_bits = 16;          // W_bit
    int input_integer_bits = 13;   // I_i-bit, sign bit included
    int weight_integer_bits = 13;  // W_i-bit, sign bit included
    int output_bits = 32;          // O_bit

    int input_fraction_bits() const { return input_bits - input_integer_bits; }
    int weight_fraction_bits() const { return weight_bits - weight_integer_bits; }
    int input_streams() const { return input_bits / input_stream_width; }
    int weight_slices() const { return weight_bits / weight_slice_width; }
    int output_fraction_bits() const { return input_fraction_bits() + weight_fraction_bits(); }

    // Throws ConfigError listing every violated constraint.
    void validate() const;

    // True when O_bit >= I_bit + W_bit + ceil(log2(rows)), i.e. a dot product over
    // `rows` terms can never overflow the declared output width.
    bool lossless_accumulation(std::size_t rows) const;

    static PrecisionConfig cifar10();
    static PrecisionConfig cifar100();
    // Same widths with the integer/fraction split read the other way round: 3 (4) integer
    // bits and 13 (12) fraction bits, which keeps trained activations and weights in range.
    static PrecisionConfig cifar10_fraction();
    static PrecisionConfig cifar100_fraction();
    // 6 integer bits for inputs and 3 for weights: trained desk-scale activations (up to ~20)
    // and folded weights fit without saturation.
    static PrecisionConfig desk();
    // "cifar10", "cifar100", "cifar10-fraction", "cifar100-fraction", "desk".
    static PrecisionConfig preset(const std::string& name);
};

bool operator==(const PrecisionConfig&, const PrecisionConfig&);

struct FixedTensor {
    std::vector<std::int64_t> raw;  // two's-complement values, each within `bits`
    std::vector<std::size_t> shape;
    int bits = 16;
    int fraction_bits = 0;
    std::size_t saturated = 0;  // elements clipped during quantization

    double scale() const;
    std::size_t size() const { return raw.size(); }
    std::vector<double> dequantize() const;
};

std::int64_t saturate(std::int64_t value, int bits);

// Round-to-nearest-even onto the grid 2^-(bits - integer_bits), saturating at the
// representable range. Sets *clipped when saturation happened.
std::int64_t quantize_value(double x, int bits, int integer_bits, bool* clipped = nullptr);

FixedTensor quantize(std::span<const double> x, std::vector<std::size_t> shape, int bits, int integer_bits);
FixedTensor quantize(std::span<const float> x, std::vector<std::size_t> shape, int bits, int integer_bits);

// LSB-first planes of `width` bits each. When signed_top is set the most
// significant plane is read as a two's-complement field, so the planes
// recombine to the original signed value.
struct SliceSet {
    int width = 4;
    int total_bits = 16;
    bool signed_top = false;
    std::size_t elements = 0;
    std::vector<std::vector<std::uint16_t>> planes;

    std::size_t plane_count() const { return planes.size(); }
    std::int64_t plane_value(std::size_t plane, std::size_t element) const;
    std::int64_t recombine(std::size_t element) const;
};

// Unsigned decomposition of non-negative values < 2^total_bits.
SliceSet slice_unsigned(std::span<const std::int64_t> values, int total_bits, int width);

// Weights are split differentially: W = W+ - W-, with W+ = max(W,0) and W- = max(-W,0),
// each sliced into unsigned planes.
struct DifferentialSlices {
    SliceSet positive;
    SliceSet negative;
};

DifferentialSlices slice_weights(const FixedTensor& w, int weight_slice_width);

// Two's-complement streaming; the top stream is signed (signed_top = true).
SliceSet stream_inputs(const FixedTensor& x, int input_stream_width);

// Integer partial sums indexed by (stream a, slice b, column).
struct PartialSums {
    std::size_t streams = 0;
    std::size_t slices = 0;
    std::size_t columns = 0;
    std::vector<std::int64_t> values;

    PartialSums() = default;
    PartialSums(std::size_t streams, std::size_t slices, std::size_t columns);
    std::int64_t& at(std::size_t a, std::size_t b, std::size_t col) {
        return values[(a * slices + b) * columns + col];
    }
    std::int64_t at(std::size_t a, std::size_t b, std::size_t col) const {
        return values[(a * slices + b) * columns + col];
    }
};

// result[col] = sum_{a,b} partials(a,b,col) * 2^(a*input_width + b*weight_width).
// Throws NumericalError if the 64-bit accumulator would overflow.
std::vector<std::int64_t> shift_add_recombine(const PartialSums& partials, int input_width, int weight_width);

}  // namespace xbr::fxp
