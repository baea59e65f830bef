#include "xbr/fxp.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "xbr/error.hpp"

namespace xbr::fxp {

void PrecisionConfig::validate() const {
    std::vector<std::string> problems;
    auto positive = [&](int v, const char* name) {
        if (v <= 0) problems.push_back(std::string(name) + " must be > 0");
    };
    positive(input_stream_width, "i_w");
    positive(weight_slice_width, "w_w");
    positive(input_bits, "i_bit");
    positive(weight_bits, "w_bit");
    positive(input_integer_bits, "i_i_bit");
    positive(weight_integer_bits, "w_i_bit");
    positive(output_bits, "o_bit");
    if (input_bits > 32 || weight_bits > 32) problems.push_back("i_bit and w_bit must be <= 32");
    if (output_bits > 63) problems.push_back("o_bit must be <= 63");
    if (input_stream_width > 16 || weight_slice_width > 16) problems.push_back("i_w and w_w must be <= 16");
    if (input_stream_width > 0 && input_bits % input_stream_width != 0)
        problems.push_back("i_w must divide i_bit");
    if (weight_slice_width > 0 && weight_bits % weight_slice_width != 0)
        problems.push_back("w_w must divide w_bit");
    if (input_integer_bits > input_bits) problems.push_back("i_i_bit must be <= i_bit");
    if (weight_integer_bits > weight_bits) problems.push_back("w_i_bit must be <= w_bit");
    if (!problems.empty()) {
        std::ostringstream os;
        os << "invalid precision config:";
        for (const auto& p : problems) os << "\n  - " << p;
        throw ConfigError(os.str());
    }
}

bool PrecisionConfig::lossless_accumulation(std::size_t rows) const {
    int log_rows = 0;
    while ((std::size_t{1} << log_rows) < rows) ++log_rows;
    return output_bits >= input_bits + weight_bits + log_rows;
}

PrecisionConfig PrecisionConfig::cifar10() { return PrecisionConfig{}; }

PrecisionConfig PrecisionConfig::cifar100() {
    PrecisionConfig p;
    p.input_integer_bits = 12;
    p.weight_integer_bits = 12;
    return p;
}

PrecisionConfig PrecisionConfig::cifar10_fraction() {
    PrecisionConfig p;
    p.input_integer_bits = 3;
    p.weight_integer_bits = 3;
    return p;
}

PrecisionConfig PrecisionConfig::cifar100_fraction() {
    PrecisionConfig p;
    p.input_integer_bits = 4;
    p.weight_integer_bits = 4;
    return p;
}

PrecisionConfig PrecisionConfig::desk() {
    PrecisionConfig p;
    p.input_integer_bits = 6;
    p.weight_integer_bits = 3;
    return p;
}

PrecisionConfig PrecisionConfig::preset(const std::string& name) {
    if (name == "cifar10") return cifar10();
    if (name == "cifar100") return cifar100();
    if (name == "cifar10-fraction") return cifar10_fraction();
    if (name == "cifar100-fraction") return cifar100_fraction();
    if (name == "desk") return desk();
    throw ConfigError("unknown precision preset '" + name +
                      "' (expected cifar10, cifar100, cifar10-fraction, cifar100-fraction or desk)");
}

bool operator==(const PrecisionConfig& a, const PrecisionConfig& b) {
    return a.input_stream_width == b.input_stream_width && a.weight_slice_width == b.weight_slice_width &&
           a.input_bits == b.input_bits && a.weight_bits == b.weight_bits &&
           a.input_integer_bits == b.input_integer_bits && a.weight_integer_bits == b.weight_integer_bits &&
           a.output_bits == b.output_bits;
}

double FixedTensor::scale() const { return std::ldexp(1.0, -fraction_bits); }

std::vector<double> FixedTensor::dequantize() const {
    std::vector<double> out(raw.size());
    const double s = scale();
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<double>(raw[i]) * s;
    return out;
}

std::int64_t saturate(std::int64_t value, int bits) {
    const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
    const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
    return value > hi ? hi : (value < lo ? lo : value);
}

std::int64_t quantize_value(double x, int bits, int integer_bits, bool* clipped) {
    const double hi = std::ldexp(1.0, bits - 1) - 1.0;
    const double lo = -std::ldexp(1.0, bits - 1);
    // nearbyint honours the default FE_TONEAREST mode: ties go to even.
    double r = std::nearbyint(std::ldexp(x, bits - integer_bits));
    bool clip = false;
    if (std::isnan(r)) {
        r = 0.0;
        clip = true;
    } else if (r > hi) {
        r = hi;
        clip = true;
    } else if (r < lo) {
        r = lo;
        clip = true;
    }
    if (clipped) *clipped = clip;
    return static_cast<std::int64_t>(r);
}

namespace {

template <typename T>
FixedTensor quantize_impl(std::span<const T> x, std::vector<std::size_t> shape, int bits, int integer_bits) {
    if (bits < 1 || integer_bits < 1 || integer_bits > bits || bits > 62)
        throw ConfigError("quantize: require 62 >= bits >= integer_bits >= 1");
    FixedTensor t;
    t.shape = std::move(shape);
    t.bits = bits;
    t.fraction_bits = bits - integer_bits;
    t.raw.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        bool clipped = false;
        t.raw[i] = quantize_value(static_cast<double>(x[i]), bits, integer_bits, &clipped);
        t.saturated += clipped ? 1 : 0;
    }
    return t;
}

}  // namespace

FixedTensor quantize(std::span<const double> x, std::vector<std::size_t> shape, int bits, int integer_bits) {
    return quantize_impl(x, std::move(shape), bits, integer_bits);
}

FixedTensor quantize(std::span<const float> x, std::vector<std::size_t> shape, int bits, int integer_bits) {
    return quantize_impl(x, std::move(shape), bits, integer_bits);
}

std::int64_t SliceSet::plane_value(std::size_t plane, std::size_t element) const {
    const std::int64_t u = planes[plane][element];
    if (signed_top && plane + 1 == planes.size() && (u >> (width - 1)) != 0) return u - (std::int64_t{1} << width);
    return u;
}

std::int64_t SliceSet::recombine(std::size_t element) const {
    std::int64_t v = 0;
    for (std::size_t k = 0; k < planes.size(); ++k) v += plane_value(k, element) * (std::int64_t{1} << (k * width));
    return v;
}

namespace {

void check_widths(int total_bits, int width, const char* what) {
    if (width < 1 || width > 16 || total_bits < 1 || total_bits > 62 || total_bits % width != 0) {
        std::ostringstream os;
        os << what << ": width " << width << " must be in [1,16] and divide total bits " << total_bits;
        throw ConfigError(os.str());
    }
}

SliceSet make_planes(std::span<const std::int64_t> values, int total_bits, int width, bool signed_top) {
    SliceSet s;
    s.width = width;
    s.total_bits = total_bits;
    s.signed_top = signed_top;
    s.elements = values.size();
    const std::size_t count = static_cast<std::size_t>(total_bits / width);
    const std::uint64_t mask = (std::uint64_t{1} << width) - 1;
    const std::uint64_t field = total_bits == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << total_bits) - 1;
    s.planes.assign(count, std::vector<std::uint16_t>(values.size(), 0));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint64_t bits = static_cast<std::uint64_t>(values[i]) & field;
        for (std::size_t k = 0; k < count; ++k)
            s.planes[k][i] = static_cast<std::uint16_t>((bits >> (k * static_cast<std::size_t>(width))) & mask);
    }
    return s;
}

}  // namespace

SliceSet slice_unsigned(std::span<const std::int64_t> values, int total_bits, int width) {
    check_widths(total_bits, width, "slice_unsigned");
    const std::int64_t limit = std::int64_t{1} << total_bits;
    for (auto v : values)
        if (v < 0 || v >= limit) throw ConfigError("slice_unsigned: value out of unsigned range");
    return make_planes(values, total_bits, width, false);
}

DifferentialSlices slice_weights(const FixedTensor& w, int weight_slice_width) {
    check_widths(w.bits, weight_slice_width, "slice_weights");
    std::vector<std::int64_t> pos(w.raw.size()), neg(w.raw.size());
    for (std::size_t i = 0; i < w.raw.size(); ++i) {
        pos[i] = w.raw[i] > 0 ? w.raw[i] : 0;
        neg[i] = w.raw[i] < 0 ? -w.raw[i] : 0;
    }
    // |min| = 2^(bits-1) still fits the unsigned field of `bits` bits.
    return {make_planes(pos, w.bits, weight_slice_width, false), make_planes(neg, w.bits, weight_slice_width, false)};
}

SliceSet stream_inputs(const FixedTensor& x, int input_stream_width) {
    check_widths(x.bits, input_stream_width, "stream_inputs");
    return make_planes(x.raw, x.bits, input_stream_width, true);
}

PartialSums::PartialSums(std::size_t a, std::size_t b, std::size_t c)
    : streams(a), slices(b), columns(c), values(a * b * c, 0) {}

std::vector<std::int64_t> shift_add_recombine(const PartialSums& partials, int input_width, int weight_width) {
    if (partials.values.size() != partials.streams * partials.slices * partials.columns)
        throw ShapeError("shift_add_recombine: partial grid is incomplete");
    std::vector<std::int64_t> acc(partials.columns, 0);
    for (std::size_t a = 0; a < partials.streams; ++a) {
        for (std::size_t b = 0; b < partials.slices; ++b) {
            const auto shift = a * static_cast<std::size_t>(input_width) + b * static_cast<std::size_t>(weight_width);
            if (shift >= 63) throw NumericalError("shift_add_recombine: shift exceeds accumulator width");
            const std::int64_t weight = std::int64_t{1} << shift;
            for (std::size_t c = 0; c < partials.columns; ++c) {
                std::int64_t term = 0;
                if (__builtin_mul_overflow(partials.at(a, b, c), weight, &term) ||
                    __builtin_add_overflow(acc[c], term, &acc[c]))
                    throw NumericalError("shift_add_recombine: accumulator overflow");
            }
        }
    }
    return acc;
}

}  // namespace xbr::fxp
