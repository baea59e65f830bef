#include "xbr/nn/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace xbr::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ---------------------------------------------------------------------------- ModelSpec

void ModelSpec::validate() const {
    std::vector<std::string> problems;
    if (classes < 2) problems.push_back("classes must be >= 2");
    if (in_channels == 0) problems.push_back("in_channels must be >= 1");
    if (stem_channels == 0) problems.push_back("stem_channels must be >= 1");
    if (widths.empty()) problems.push_back("at least one residual group is required");
    if (widths.size() != depths.size()) problems.push_back("widths and depths differ in length");
    for (auto w : widths)
        if (w == 0) problems.push_back("group width must be >= 1");
    for (auto d : depths)
        if (d == 0) problems.push_back("group depth must be >= 1");
    if (pixel_mean.size() != in_channels || pixel_std.size() != in_channels)
        problems.push_back("pixel_mean/pixel_std need one entry per input channel");
    for (auto s : pixel_std)
        if (!(s > 0.0)) problems.push_back("pixel_std entries must be > 0");
    const std::size_t downsample = widths.empty() ? 1 : (std::size_t{1} << (widths.size() - 1));
    if (image_size == 0 || image_size % downsample != 0)
        problems.push_back("image_size must be divisible by " + std::to_string(downsample));
    if (!problems.empty()) {
        std::string msg = "model spec '" + name + "' invalid:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

nlohmann::json ModelSpec::to_json() const {
    return {{"name", name},
            {"classes", classes},
            {"in_channels", in_channels},
            {"image_size", image_size},
            {"stem_channels", stem_channels},
            {"widths", widths},
            {"depths", depths},
            {"pixel_mean", pixel_mean},
            {"pixel_std", pixel_std}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
    ModelSpec s;
    try {
        s.name = j.at("name").get<std::string>();
        s.classes = j.at("classes").get<std::size_t>();
        s.in_channels = j.at("in_channels").get<std::size_t>();
        s.image_size = j.at("image_size").get<std::size_t>();
        s.stem_channels = j.at("stem_channels").get<std::size_t>();
        s.widths = j.at("widths").get<std::vector<std::size_t>>();
        s.depths = j.at("depths").get<std::vector<std::size_t>>();
        s.pixel_mean = j.at("pixel_mean").get<std::vector<double>>();
        s.pixel_std = j.at("pixel_std").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model spec: ") + e.what());
    }
    s.validate();
    return s;
}

ModelSpec model_spec(const std::string& id) {
    ModelSpec s;
    s.name = id;
    if (id == "resnet10w1") {
        s.widths = {16, 32, 64};
        s.depths = {1, 1, 2};
    } else if (id == "resnet10w4") {
        s.widths = {64, 128, 256};
        s.depths = {1, 1, 2};
    } else if (id == "resnet20w1" || id == "resnet20w4") {
        s.classes = 100;
        s.widths = id == "resnet20w1" ? std::vector<std::size_t>{16, 32, 64} : std::vector<std::size_t>{64, 128, 256};
        s.depths = {3, 3, 3};
        s.pixel_mean = {129.304, 124.070, 112.434};
        s.pixel_std = {68.170, 65.392, 70.418};
    } else if (id == "resnet10w1-tiny") {
        s.stem_channels = 8;
        s.widths = {8, 16, 32};
        s.depths = {1, 1, 2};
    } else {
        std::string known;
        for (const auto& k : model_ids()) known += " " + k;
        throw ConfigError("unknown model '" + id + "'; known:" + known);
    }
    return s;
}

std::vector<std::string> model_ids() {
    return {"resnet10w1", "resnet10w4", "resnet20w1", "resnet20w4", "resnet10w1-tiny"};
}

// ---------------------------------------------------------------------------- Network

namespace {

template <typename T>
std::unique_ptr<Sequential<T>> build_resnet(const ModelSpec& s) {
    auto root = std::make_unique<Sequential<T>>("net");
    root->add(std::make_unique<Normalize<T>>("normalize", std::vector<T>(s.pixel_mean.begin(), s.pixel_mean.end()),
                                             std::vector<T>(s.pixel_std.begin(), s.pixel_std.end())));
    root->add(std::make_unique<Conv2d<T>>("conv0", ConvGeometry{s.in_channels, s.stem_channels, 3, 1, 1}));
    root->add(std::make_unique<BatchNorm2d<T>>("bn0", s.stem_channels));
    root->add(std::make_unique<ReLU<T>>("relu0"));
    std::size_t channels = s.stem_channels;
    for (std::size_t g = 0; g < s.widths.size(); ++g) {
        for (std::size_t b = 0; b < s.depths[g]; ++b) {
            const std::size_t stride = (g > 0 && b == 0) ? 2 : 1;
            const std::size_t out = s.widths[g];
            const std::string prefix = "conv" + std::to_string(g + 1) + "." + std::to_string(b);
            auto branch = std::make_unique<Sequential<T>>(prefix + ".branch");
            branch->add(std::make_unique<Conv2d<T>>(prefix + ".a", ConvGeometry{channels, out, 3, stride, 1}));
            branch->add(std::make_unique<BatchNorm2d<T>>(prefix + ".bn_a", out));
            branch->add(std::make_unique<ReLU<T>>(prefix + ".relu_a"));
            branch->add(std::make_unique<Conv2d<T>>(prefix + ".b", ConvGeometry{out, out, 3, 1, 1}));
            branch->add(std::make_unique<BatchNorm2d<T>>(prefix + ".bn_b", out));
            std::unique_ptr<Sequential<T>> shortcut;
            if (stride != 1 || channels != out) {
                shortcut = std::make_unique<Sequential<T>>(prefix + ".shortcut");
                shortcut->add(std::make_unique<Conv2d<T>>(prefix + ".proj", ConvGeometry{channels, out, 1, stride, 0}));
                shortcut->add(std::make_unique<BatchNorm2d<T>>(prefix + ".bn_proj", out));
            }
            root->add(std::make_unique<ResidualBlock<T>>(prefix, std::move(branch), std::move(shortcut)));
            channels = out;
        }
    }
    root->add(std::make_unique<GlobalAvgPool<T>>("pool"));
    root->add(std::make_unique<Linear<T>>("fc", channels, s.classes));
    return root;
}

}  // namespace

template <typename T>
Network<T>::Network(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    root_ = build_resnet<T>(spec_);
    root_->assign_op_ids(op_count_);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Phase phase) {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.image_size ||
        x.dim(3) != spec_.image_size)
        throw ShapeError("network: expected (B," + std::to_string(spec_.in_channels) + "," +
                         std::to_string(spec_.image_size) + "," + std::to_string(spec_.image_size) + ") input, got " +
                         shape_string(x.shape()));
    return root_->forward(x, phase);
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& grad_logits, bool param_grads) {
    return root_->backward(grad_logits, param_grads);
}

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& x, MvmExecutor<T>* exec) const {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.image_size ||
        x.dim(3) != spec_.image_size)
        throw ShapeError("network: unexpected input shape " + shape_string(x.shape()));
    return root_->infer(x, exec);
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
    std::vector<Parameter<T>*> out;
    root_->collect_parameters(out);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> Network<T>::parameters() const {
    std::vector<Parameter<T>*> tmp;
    root_->collect_parameters(tmp);
    return {tmp.begin(), tmp.end()};
}

template <typename T>
void Network<T>::zero_grad() {
    for (auto* p : parameters()) p->grad.fill(T{0});
}

template <typename T>
void Network<T>::init_he_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto* p : parameters()) {
        if (p->fan_in == 0) continue;
        const double bound = std::sqrt(6.0 / static_cast<double>(p->fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : p->value.values()) v = static_cast<T>(dist(rng));
    }
}

// ---------------------------------------------------------------------------- loss

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: expected (B, K) logits");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t n = 0; n < b; ++n) {
        const T* z = logits.data() + n * k;
        T* q = p.data() + n * k;
        const T zmax = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) sum += std::exp(static_cast<double>(z[c] - zmax));
        for (std::size_t c = 0; c < k; ++c) q[c] = static_cast<T>(std::exp(static_cast<double>(z[c] - zmax)) / sum);
    }
    return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw ShapeError("cross entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    LossResult<T> r;
    r.grad = softmax(logits);
    double total = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw ShapeError("cross entropy: label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
        const T* z = logits.data() + n * k;
        const T zmax = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) sum += std::exp(static_cast<double>(z[c] - zmax));
        total += std::log(sum) - static_cast<double>(z[y] - zmax);
        if (static_cast<std::size_t>(std::max_element(z, z + k) - z) == static_cast<std::size_t>(y)) ++r.correct;
        T* g = r.grad.data() + n * k;
        g[y] -= T{1};
        for (std::size_t c = 0; c < k; ++c) g[c] /= static_cast<T>(b);
    }
    r.loss = b ? total / static_cast<double>(b) : 0.0;
    return r;
}

template <typename T>
Tensor<T> input_gradient(Network<T>& net, const Tensor<T>& x, std::span<const int> labels, Phase phase,
                         double* loss) {
    const Tensor<T> logits = net.forward(x, phase);
    auto r = softmax_cross_entropy(logits, labels);
    if (loss) *loss = r.loss;
    return net.backward(r.grad, false);
}

// ---------------------------------------------------------------------------- SGD

template <typename T>
Sgd<T>::Sgd(std::vector<Parameter<T>*> params, SgdConfig config) : params_(std::move(params)), config_(config) {
    velocity_.reserve(params_.size());
    for (auto* p : params_) velocity_.emplace_back(p->value.shape(), T{0});
}

template <typename T>
void Sgd<T>::step(double lr) {
    const T mu = static_cast<T>(config_.momentum), wd = static_cast<T>(config_.weight_decay),
            eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto* p = params_[i];
        if (!p->trainable) continue;
        auto& v = velocity_[i];
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = mu * v[k] + (p->grad[k] + wd * p->value[k]);
            p->value[k] -= eta * v[k];
        }
    }
}

// ---------------------------------------------------------------------------- checkpoints

namespace {

template <typename U>
void put(std::ostream& os, U v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

class Reader {
public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

    template <typename U>
    U get(const char* what) {
        U v{};
        bytes(reinterpret_cast<char*>(&v), sizeof(U), what);
        return v;
    }

    void bytes(char* dst, std::size_t n, const char* what) {
        is_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            throw IngestionError("checkpoint " + path_ + ": truncated while reading " + what + " at byte offset " +
                                 std::to_string(offset_));
        offset_ += n;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw IngestionError("checkpoint " + path_ + ": " + msg + " at byte offset " + std::to_string(offset_));
    }

    std::size_t offset() const { return offset_; }

private:
    std::istream& is_;
    std::string path_;
    std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, const CheckpointMeta& meta) {
    nlohmann::json header = {{"model", net.spec().to_json()},
                             {"meta",
                              {{"epsilon_train", meta.epsilon_train},
                               {"epochs", meta.epochs},
                               {"seed", meta.seed},
                               {"extra", meta.extra}}}};
    const std::string text = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IngestionError("checkpoint: cannot open " + path.string() + " for writing");
    os.write("XBNN", 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = net.parameters();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
        for (auto d : p->value.shape()) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!os) throw IngestionError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("checkpoint: cannot open " + path.string());
    Reader r(is, path.string());
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "XBNN", 4) != 0) r.fail("bad magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
    const auto header_len = r.get<std::uint32_t>("header length");
    std::string text(header_len, '\0');
    r.bytes(text.data(), header_len, "header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("malformed header: ") + e.what());
    }
    Checkpoint ck;
    try {
        ck.net = std::make_unique<Network<float>>(ModelSpec::from_json(header.at("model")));
        const auto& m = header.at("meta");
        ck.meta.epsilon_train = m.at("epsilon_train").get<double>();
        ck.meta.epochs = m.at("epochs").get<std::size_t>();
        ck.meta.seed = m.at("seed").get<std::uint64_t>();
        ck.meta.extra = m.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("header fields: ") + e.what());
    }
    auto params = ck.net->parameters();
    const auto count = r.get<std::uint32_t>("parameter count");
    if (count != params.size())
        r.fail("parameter count " + std::to_string(count) + " does not match model (" +
               std::to_string(params.size()) + ")");
    for (auto* p : params) {
        const auto len = r.get<std::uint32_t>("name length");
        if (len > 4096) r.fail("implausible name length");
        std::string name(len, '\0');
        r.bytes(name.data(), len, "parameter name");
        if (name != p->name) r.fail("expected parameter '" + p->name + "', found '" + name + "'");
        const auto rank = r.get<std::uint32_t>("rank");
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>("dimension");
        if (shape != p->value.shape())
            r.fail("parameter '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                   shape_string(p->value.shape()));
        r.bytes(reinterpret_cast<char*>(p->value.data()), p->value.size() * sizeof(float), "parameter values");
    }
    return ck;
}

#define XBR_INSTANTIATE_NETWORK(T)                                                                      \
    template class Network<T>;                                                                          \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                                    \
    template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);            \
    template Tensor<T> input_gradient<T>(Network<T>&, const Tensor<T>&, std::span<const int>, Phase, double*); \
    template class Sgd<T>;

XBR_INSTANTIATE_NETWORK(float)
XBR_INSTANTIATE_NETWORK(double)

}  // namespace xbr::nn
