#include <doctest.h>

#include <cmath>
#include <random>

#include "../common/oracles.hpp"
#include "xbr/error.hpp"
#include "xbr/mapper.hpp"

using namespace xbr;
using namespace xbr::mapper;

namespace {

struct Layer {
    nn::ConvGeometry g;
    nn::OpKind kind = nn::OpKind::conv;
    Tensor<float> weight;
    std::vector<float> bias;

    nn::MappedOp<float> op() const {
        nn::MappedOp<float> m;
        m.kind = kind;
        m.geometry = g;
        m.weight = &weight;
        m.bias = bias;
        m.name = "layer";
        return m;
    }
};

Layer random_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad,
                  std::mt19937_64& rng) {
    Layer l;
    l.g = {cin, cout, k, stride, pad};
    l.weight = Tensor<float>({cout, cin, k, k});
    std::normal_distribution<float> d(0.0f, 0.3f);
    for (auto& v : l.weight.storage()) v = d(rng);
    l.bias.resize(cout);
    for (auto& v : l.bias) v = d(rng);
    return l;
}

Layer random_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Layer l;
    l.kind = nn::OpKind::linear;
    l.g = {in, out, 1, 1, 0};
    l.weight = Tensor<float>({out, in});
    std::normal_distribution<float> d(0.0f, 0.3f);
    for (auto& v : l.weight.storage()) v = d(rng);
    l.bias.assign(out, 0.25f);
    return l;
}

Tensor<float> random_input(Shape s, std::mt19937_64& rng, float scale = 2.0f) {
    Tensor<float> x(std::move(s));
    std::uniform_real_distribution<float> d(-scale, scale);
    for (auto& v : x.storage()) v = d(rng);
    return x;
}

MapperConfig ideal(std::size_t size = 64) {
    MapperConfig c;
    c.backend = Backend::ideal_crossbar;
    c.precision = fxp::PrecisionConfig::cifar10_fraction();
    c.crossbar.rows = c.crossbar.cols = size;
    return c;
}

}  // namespace

TEST_CASE("conv lowering dimensions") {
    const nn::ConvGeometry g{16, 16, 3, 1, 1};
    const auto d = lower_conv(g, {16, 32, 32});
    CHECK(d.positions == 1024);
    CHECK(d.rows == 144);
    CHECK(d.cols == 16);
    const auto s2 = lower_conv({16, 32, 3, 2, 1}, {4, 16, 32, 32});
    CHECK(s2.positions == 256);
    CHECK(s2.out_height == 16);
    CHECK_THROWS_AS(lower_conv(g, {8, 32, 32}), ShapeError);
}

TEST_CASE("1x1 conv lowering is a transpose of the image") {
    std::mt19937_64 rng(1);
    const auto x = random_input({3, 4, 5}, rng);
    const auto m = lower_conv_inputs({3, 2, 1, 1, 0}, x);
    REQUIRE(m.shape() == Shape{20, 3});
    for (std::size_t p = 0; p < 20; ++p)
        for (std::size_t c = 0; c < 3; ++c) CHECK(m[p * 3 + c] == x[c * 20 + p]);
}

TEST_CASE("lowered rows are the receptive fields") {
    std::mt19937_64 rng(2);
    const auto x = random_input({2, 5, 5}, rng);
    const nn::ConvGeometry g{2, 1, 3, 2, 1};
    const auto m = lower_conv_inputs(g, x);
    REQUIRE(m.shape() == Shape{9, 18});
    // output (1, 2) reads input rows 1..3, cols 3..5 with the last column in the padding
    const std::size_t p = 1 * 3 + 2;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::size_t iy = 2 + ky - 1, ix = 4 + kx - 1;
                const float want = ix < 5 ? x[(c * 5 + iy) * 5 + ix] : 0.0f;
                CHECK(m[p * 18 + (c * 3 + ky) * 3 + kx] == want);
            }
}

TEST_CASE("tile planning examples") {
    auto p = plan_tiles(144, 32, 64, 64);
    CHECK(p.grid_rows == 3);
    CHECK(p.grid_cols == 1);
    CHECK(p.tile_count() == 3);
    CHECK(p.tiles[2].row_begin == 128);
    CHECK(p.tiles[2].row_end == 144);
    CHECK(plan_tiles(64, 64, 64, 64).tile_count() == 1);
    p = plan_tiles(65, 65, 64, 64, 7, 4);
    CHECK(p.tile_count() == 4);
    CHECK(p.layer_id == 7);
    CHECK(p.tiles[3].col_begin == 64);
    CHECK(p.tiles[3].col_end == 65);
    CHECK(p.instance(3, 2) == 14);
    CHECK(plan_tiles(64, 20, 64, 64).tile_count() == 1);
}

TEST_CASE("tiles cover the matrix exactly once") {
    for (auto [r, c, xr, xc] : {std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>{576, 128, 64, 64},
                                {10, 3, 4, 2},
                                {1, 1, 32, 32}}) {
        const auto p = plan_tiles(r, c, xr, xc);
        std::vector<int> hit(r * c, 0);
        for (const auto& t : p.tiles) {
            CHECK(t.row_end - t.row_begin <= xr);
            CHECK(t.col_end - t.col_begin <= xc);
            for (std::size_t i = t.row_begin; i < t.row_end; ++i)
                for (std::size_t j = t.col_begin; j < t.col_end; ++j) ++hit[i * c + j];
        }
        for (int h : hit) CHECK(h == 1);
    }
}

TEST_CASE("linear layer is one MVM per input vector") {
    std::mt19937_64 rng(3);
    const auto l = random_linear(64, 10, rng);
    const auto cfg = ideal();
    const auto prog = program_layer(l.op(), cfg);
    CHECK(prog.plan.rows == 64);
    CHECK(prog.plan.cols == 20);
    CHECK(prog.plan.tile_count() == 1);
    const auto out = execute_layer(prog, random_input({1, 64}, rng), cfg);
    CHECK(out.accumulator.shape == std::vector<std::size_t>{1, 10});
}

TEST_CASE("ideal crossbar equals the integer reference bit for bit") {
    std::mt19937_64 rng(4);
    for (std::size_t size : {16, 64}) {
        const auto cfg = ideal(size);
        const auto conv = random_conv(5, 7, 3, 2, 1, rng);
        const auto x = random_input({2, 5, 9, 9}, rng);
        const auto prog = program_layer(conv.op(), cfg);
        CHECK(execute_layer(prog, x, cfg).accumulator.raw == oracle::fixed_conv(x, conv.weight, conv.g, cfg.precision));

        const auto lin = random_linear(150, 12, rng);
        const auto xl = random_input({3, 150}, rng);
        const auto pl = program_layer(lin.op(), cfg);
        CHECK(execute_layer(pl, xl, cfg).accumulator.raw == oracle::fixed_conv(xl, lin.weight, lin.g, cfg.precision));
    }
}

TEST_CASE("integer result does not depend on the tile size") {
    std::mt19937_64 rng(5);
    const auto conv = random_conv(8, 6, 3, 1, 1, rng);
    const auto x = random_input({1, 8, 6, 6}, rng);
    std::vector<std::int64_t> first;
    for (std::size_t size : {4, 13, 32, 128}) {
        const auto cfg = ideal(size);
        const auto raw = execute_layer(program_layer(conv.op(), cfg), x, cfg).accumulator.raw;
        if (first.empty()) first = raw;
        CHECK(raw == first);
    }
}

TEST_CASE("negated weights give negated accumulators") {
    std::mt19937_64 rng(6);
    auto l = random_linear(40, 5, rng);
    const auto x = random_input({4, 40}, rng);
    const auto cfg = ideal();
    const auto a = execute_layer(program_layer(l.op(), cfg), x, cfg).accumulator.raw;
    for (auto& w : l.weight.storage()) w = -w;
    const auto b = execute_layer(program_layer(l.op(), cfg), x, cfg).accumulator.raw;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == -a[i]);
}

TEST_CASE("float reference equals a direct convolution") {
    std::mt19937_64 rng(7);
    const auto conv = random_conv(4, 5, 3, 1, 1, rng);
    const auto x = random_input({2, 4, 7, 7}, rng, 50.0f);
    MapperConfig cfg;
    cfg.backend = Backend::float_reference;
    const auto z = execute_layer(program_layer(conv.op(), cfg), x, cfg).z;
    const auto ref = oracle::direct_conv(x, conv.weight, conv.bias, conv.g);
    REQUIRE(z.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(z[i] - ref[i]) <= 1e-5 * std::max(1.0, std::abs(ref[i])));
}

TEST_CASE("parasitic-free nodal crossbar matches the ideal backend") {
    std::mt19937_64 rng(8);
    const auto conv = random_conv(3, 4, 3, 1, 1, rng);
    const auto x = random_input({1, 3, 5, 5}, rng);
    auto id = ideal(16);
    auto nodal = id;
    nodal.backend = Backend::nodal_crossbar;
    const auto a = execute_layer(program_layer(conv.op(), id), x, id).accumulator.raw;
    const auto b = execute_layer(program_layer(conv.op(), nodal), x, nodal).accumulator.raw;
    CHECK(a == b);
}

TEST_CASE("parasitics shrink crossbar outputs") {
    std::mt19937_64 rng(9);
    auto l = random_linear(64, 8, rng);
    for (auto& w : l.weight.storage()) w = std::abs(w);
    Tensor<float> x({2, 64});
    std::uniform_real_distribution<float> d(0.5f, 2.0f);
    for (auto& v : x.storage()) v = d(rng);
    auto id = ideal(64);
    auto nodal = id;
    nodal.backend = Backend::nodal_crossbar;
    nodal.crossbar = xbar::calibrated_config(64);
    const auto a = execute_layer(program_layer(l.op(), id), x, id).z;
    const auto b = execute_layer(program_layer(l.op(), nodal), x, nodal).z;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(b[i] < a[i]);
        CHECK(b[i] > 0.25f);
    }
}

TEST_CASE("all-zero weight slices are not programmed") {
    Layer l;
    l.kind = nn::OpKind::linear;
    l.g = {8, 2, 1, 1, 0};
    l.weight = Tensor<float>({2, 8}, 0.0f);
    auto cfg = ideal(64);
    auto prog = program_layer(l.op(), cfg);
    for (const auto& c : prog.crossbars) CHECK(c == nullptr);
    std::mt19937_64 rng(1);
    for (auto v : execute_layer(prog, random_input({2, 8}, rng), cfg).accumulator.raw) CHECK(v == 0);
    // weights below 2^-13 only touch the lowest slice
    l.weight.fill(3.0f / 8192.0f);
    prog = program_layer(l.op(), cfg);
    std::size_t live = 0;
    for (const auto& c : prog.crossbars) live += c != nullptr;
    CHECK(live == 1);
}

TEST_CASE("mapped network float reference reproduces the float model") {
    nn::Network<float> net(nn::model_spec("resnet10w1-tiny"));
    net.init_he_uniform(2);
    std::mt19937_64 rng(10);
    Tensor<float> x({3, 3, 32, 32});
    std::uniform_real_distribution<float> d(0.0f, 255.0f);
    for (auto& v : x.storage()) v = d(rng);
    MapperConfig cfg;
    cfg.backend = Backend::float_reference;
    MappedNetwork m(net, cfg);
    CHECK(m.layer_count() == 12);
    std::vector<LayerTrace> traces;
    const auto y = m.forward(x, &traces);
    const auto ref = net.infer(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    REQUIRE(traces.size() == 12);
    CHECK(traces.front().z.shape() == Shape{3, 8, 32, 32});
    CHECK(traces.back().z.shape() == Shape{3, 10});
    CHECK(traces.back().name == "fc");
    CHECK_THROWS_AS(m.input_gradient(x, {0, 1, 2}), UnsupportedOperation);

    // untrained activations need more integer bits than the trained-model preset provides
    auto icfg = ideal();
    icfg.precision.input_integer_bits = 8;
    icfg.precision.weight_integer_bits = 2;
    MappedNetwork im(net, icfg);
    const auto yi = im.forward(x);
    for (std::size_t i = 0; i < yi.size(); ++i) CHECK(std::abs(yi[i] - ref[i]) < 0.05f);
}

TEST_CASE("backend names") {
    for (auto b : {Backend::float_reference, Backend::ideal_crossbar, Backend::nodal_crossbar, Backend::surrogate_crossbar})
        CHECK(parse_backend(to_string(b)) == b);
    CHECK(parse_backend("nodal") == Backend::nodal_crossbar);
    CHECK_THROWS_AS(parse_backend("optical"), ConfigError);
}

TEST_CASE("surrogate backend requires a matching model") {
    MapperConfig c;
    c.backend = Backend::surrogate_crossbar;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
