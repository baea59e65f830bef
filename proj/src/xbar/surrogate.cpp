#include "xbr/surrogate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "xbr/error.hpp"

namespace xbr::xbar {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

void put_f64(std::ostream& os, double x) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &x, sizeof bits);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
}

bool get_f64(std::istream& is, double* x) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(x, &bits, sizeof bits);
    return true;
}

}  // namespace

std::vector<SurrogateRecord> generate_surrogate_dataset(const CrossbarConfig& config, std::size_t count,
                                                        std::uint64_t seed) {
    config.validate();
    std::vector<SurrogateRecord> out;
    out.reserve(count);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> volt(0.0, config.v_max);
    std::uniform_real_distribution<double> cond(config.g_min(), config.g_max());
    for (std::size_t k = 0; k < count; ++k) {
        SurrogateRecord r;
        r.v.resize(config.rows);
        for (auto& x : r.v) x = volt(rng);
        ConductanceMatrix g(config.rows, config.cols);
        for (auto& x : g.values()) x = cond(rng);
        r.g.assign(g.values().begin(), g.values().end());
        r.i = nonideal_mvm_nodal(r.v, g, config);
        out.push_back(std::move(r));
    }
    return out;
}

void write_surrogate_dataset(const std::filesystem::path& path, const std::vector<SurrogateRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
    for (const auto& r : records) {
        for (double x : r.v) put_f64(os, x);
        for (double x : r.g) put_f64(os, x);
        for (double x : r.i) put_f64(os, x);
    }
    if (!os) throw IngestionError("write failed: " + path.string());
}

std::vector<SurrogateRecord> read_surrogate_dataset(const std::filesystem::path& path, std::size_t rows,
                                                    std::size_t cols) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("cannot open " + path.string());
    const std::size_t record_bytes = 8 * (rows + rows * cols + cols);
    const auto size = std::filesystem::file_size(path);
    if (size % record_bytes != 0) {
        std::ostringstream os;
        os << path.string() << ": size " << size << " is not a multiple of the record size " << record_bytes
           << " (truncated at byte offset " << size - size % record_bytes << ")";
        throw IngestionError(os.str());
    }
    std::vector<SurrogateRecord> out(size / record_bytes);
    for (auto& r : out) {
        r.v.resize(rows);
        r.g.resize(rows * cols);
        r.i.resize(cols);
        for (auto* part : {&r.v, &r.g, &r.i})
            for (auto& x : *part)
                if (!get_f64(is, &x)) throw IngestionError("unexpected end of " + path.string());
    }
    return out;
}

std::uint64_t dataset_hash(const std::vector<SurrogateRecord>& records) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](double x) {
        unsigned char b[8];
        std::memcpy(b, &x, 8);
        for (unsigned char c : b) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& r : records) {
        for (double x : r.v) mix(x);
        for (double x : r.g) mix(x);
        for (double x : r.i) mix(x);
    }
    return h;
}

SurrogateModel::SurrogateModel(const CrossbarConfig& config, std::size_t hidden_units, std::uint64_t seed)
    : rows_(config.rows), cols_(config.cols), hidden_(hidden_units), v_max_(config.v_max),
      g_min_(config.g_min()), g_max_(config.g_max()) {
    const std::size_t in = input_dim();
    std::mt19937_64 rng(seed);
    const double a1 = std::sqrt(1.0 / static_cast<double>(in));
    const double a2 = std::sqrt(1.0 / static_cast<double>(hidden_));
    std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
    w1_.resize(hidden_ * in);
    for (auto& x : w1_) x = u1(rng);
    b1_.assign(hidden_, 0.0);
    w2_.resize(cols_ * hidden_);
    for (auto& x : w2_) x = u2(rng);
    b2_.assign(cols_, 0.0);
}

void SurrogateModel::encode(std::span<const double> v, std::span<const double> g, double* out) const {
    for (std::size_t i = 0; i < rows_; ++i) out[i] = 2.0 * v[i] / v_max_ - 1.0;
    const double span = g_max_ - g_min_;
    for (std::size_t k = 0; k < rows_ * cols_; ++k) out[rows_ + k] = 2.0 * (g[k] - g_min_) / span - 1.0;
}

std::vector<double> SurrogateModel::evaluate(std::span<const double> v, std::span<const double> g) const {
    const std::size_t in = input_dim();
    std::vector<double> x(in);
    encode(v, g, x.data());
    Eigen::Map<const Mat> w1(w1_.data(), static_cast<Eigen::Index>(hidden_), static_cast<Eigen::Index>(in));
    Eigen::Map<const Mat> w2(w2_.data(), static_cast<Eigen::Index>(cols_), static_cast<Eigen::Index>(hidden_));
    Eigen::Map<const Vec> xv(x.data(), static_cast<Eigen::Index>(in));
    Eigen::Map<const Vec> b1(b1_.data(), static_cast<Eigen::Index>(hidden_));
    Eigen::Map<const Vec> b2(b2_.data(), static_cast<Eigen::Index>(cols_));
    Vec h = (w1 * xv + b1).array().tanh().matrix();
    Vec y = w2 * h + b2;
    std::vector<double> out(cols_);
    for (std::size_t j = 0; j < cols_; ++j) out[j] = y[static_cast<Eigen::Index>(j)] * i_std_ + i_mean_;
    return out;
}

std::vector<double> SurrogateModel::mvm(std::span<const double> v, const ConductanceMatrix& g) const {
    if (v.size() != rows_ || g.rows() != rows_ || g.cols() != cols_)
        throw ShapeError("surrogate: dimensions do not match the fitted crossbar");
    const bool bipolar = std::any_of(v.begin(), v.end(), [](double x) { return x < 0.0; });
    if (!bipolar) return evaluate(v, g.values());
    // Trained on non-negative drives; a bipolar drive is split by superposition.
    std::vector<double> pos(rows_), neg(rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
        pos[i] = std::max(v[i], 0.0);
        neg[i] = std::max(-v[i], 0.0);
    }
    auto a = evaluate(pos, g.values());
    auto b = evaluate(neg, g.values());
    for (std::size_t j = 0; j < cols_; ++j) a[j] -= b[j];
    return a;
}

void SurrogateModel::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "xbar-surrogate";
    j["version"] = 1;
    j["rows"] = rows_;
    j["cols"] = cols_;
    j["hidden"] = hidden_;
    j["v_max"] = v_max_;
    j["g_min"] = g_min_;
    j["g_max"] = g_max_;
    j["i_mean"] = i_mean_;
    j["i_std"] = i_std_;
    j["w1"] = w1_;
    j["b1"] = b1_;
    j["w2"] = w2_;
    j["b2"] = b2_;
    j["report"] = {{"train_mse", report_.train_mse},
                   {"heldout_mse", report_.heldout_mse},
                   {"heldout_variance", report_.heldout_variance},
                   {"heldout_relative_error", report_.heldout_relative_error},
                   {"train_count", report_.train_count},
                   {"heldout_count", report_.heldout_count},
                   {"dataset_hash", report_.dataset_hash}};
    std::ofstream os(path);
    if (!os) throw IngestionError("cannot open " + path.string() + " for writing");
    os << j.dump();
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IngestionError("cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw IngestionError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "xbar-surrogate") throw IngestionError(path.string() + ": not a surrogate model");
    SurrogateModel m;
    m.rows_ = j.at("rows");
    m.cols_ = j.at("cols");
    m.hidden_ = j.at("hidden");
    m.v_max_ = j.at("v_max");
    m.g_min_ = j.at("g_min");
    m.g_max_ = j.at("g_max");
    m.i_mean_ = j.at("i_mean");
    m.i_std_ = j.at("i_std");
    m.w1_ = j.at("w1").get<std::vector<double>>();
    m.b1_ = j.at("b1").get<std::vector<double>>();
    m.w2_ = j.at("w2").get<std::vector<double>>();
    m.b2_ = j.at("b2").get<std::vector<double>>();
    if (m.w1_.size() != m.hidden_ * m.input_dim() || m.w2_.size() != m.cols_ * m.hidden_)
        throw IngestionError(path.string() + ": weight sizes do not match declared dimensions");
    const auto& r = j.at("report");
    m.report_.train_mse = r.at("train_mse");
    m.report_.heldout_mse = r.at("heldout_mse");
    m.report_.heldout_variance = r.at("heldout_variance");
    m.report_.heldout_relative_error = r.at("heldout_relative_error");
    m.report_.train_count = r.at("train_count");
    m.report_.heldout_count = r.at("heldout_count");
    m.report_.dataset_hash = r.at("dataset_hash");
    return m;
}

SurrogateModel fit_surrogate(const std::vector<SurrogateRecord>& dataset, const CrossbarConfig& config,
                             const SurrogateFitOptions& opt) {
    if (dataset.empty()) throw ConfigError("fit_surrogate: dataset is empty");
    const std::size_t n = config.rows, m = config.cols;
    for (const auto& r : dataset)
        if (r.v.size() != n || r.g.size() != n * m || r.i.size() != m)
            throw ShapeError("fit_surrogate: record dimensions do not match the crossbar config");

    SurrogateModel model(config, opt.hidden_units, opt.seed);
    std::size_t held = static_cast<std::size_t>(std::floor(opt.holdout_fraction * static_cast<double>(dataset.size())));
    if (dataset.size() > 1) held = std::clamp<std::size_t>(held, 1, dataset.size() - 1);
    else held = 0;
    const std::size_t train = dataset.size() - held;

    const auto in = static_cast<Eigen::Index>(model.input_dim());
    const auto hid = static_cast<Eigen::Index>(model.hidden_);
    const auto out = static_cast<Eigen::Index>(m);

    Mat x_all(static_cast<Eigen::Index>(dataset.size()), in);
    Mat t_all(static_cast<Eigen::Index>(dataset.size()), out);
    double mean = 0.0;
    for (std::size_t k = 0; k < train; ++k)
        for (double c : dataset[k].i) mean += c;
    mean /= static_cast<double>(train * m);
    double var = 0.0;
    for (std::size_t k = 0; k < train; ++k)
        for (double c : dataset[k].i) var += (c - mean) * (c - mean);
    var /= static_cast<double>(train * m);
    model.i_mean_ = mean;
    model.i_std_ = var > 0.0 ? std::sqrt(var) : std::max(std::abs(mean), 1e-30);
    for (std::size_t k = 0; k < dataset.size(); ++k) {
        model.encode(dataset[k].v, dataset[k].g, x_all.row(static_cast<Eigen::Index>(k)).data());
        for (std::size_t j = 0; j < m; ++j)
            t_all(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = (dataset[k].i[j] - mean) / model.i_std_;
    }

    Eigen::Map<Mat> w1(model.w1_.data(), hid, in);
    Eigen::Map<Vec> b1(model.b1_.data(), hid);
    Eigen::Map<Mat> w2(model.w2_.data(), out, hid);
    Eigen::Map<Vec> b2(model.b2_.data(), out);

    // Adam state
    Mat mw1 = Mat::Zero(hid, in), vw1 = Mat::Zero(hid, in);
    Vec mb1 = Vec::Zero(hid), vb1 = Vec::Zero(hid);
    Mat mw2 = Mat::Zero(out, hid), vw2 = Mat::Zero(out, hid);
    Vec mb2 = Vec::Zero(out), vb2 = Vec::Zero(out);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    std::vector<std::size_t> order(train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);

    auto adam = [&](auto& param, auto& grad, auto& mom, auto& vel, double lr) {
        mom = beta1 * mom + (1.0 - beta1) * grad;
        vel = beta2 * vel + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        param.array() -= lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
    };

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        // cosine decay
        const double lr = opt.learning_rate * 0.5 *
                          (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(opt.epochs)));
        for (std::size_t start = 0; start < train; start += bs) {
            const std::size_t end = std::min(train, start + bs);
            const auto b = static_cast<Eigen::Index>(end - start);
            Mat xb(b, in), tb(b, out);
            for (std::size_t k = start; k < end; ++k) {
                xb.row(static_cast<Eigen::Index>(k - start)) = x_all.row(static_cast<Eigen::Index>(order[k]));
                tb.row(static_cast<Eigen::Index>(k - start)) = t_all.row(static_cast<Eigen::Index>(order[k]));
            }
            Mat h = ((xb * w1.transpose()).rowwise() + b1.transpose()).array().tanh().matrix();
            Mat y = (h * w2.transpose()).rowwise() + b2.transpose();
            Mat dy = (y - tb) * (2.0 / static_cast<double>(b * out));
            Mat gw2 = dy.transpose() * h;
            Vec gb2 = dy.colwise().sum().transpose();
            Mat dh = (dy * w2).array() * (1.0 - h.array().square());
            Mat gw1 = dh.transpose() * xb;
            Vec gb1 = dh.colwise().sum().transpose();
            ++step;
            adam(w1, gw1, mw1, vw1, lr);
            adam(b1, gb1, mb1, vb1, lr);
            adam(w2, gw2, mw2, vw2, lr);
            adam(b2, gb2, mb2, vb2, lr);
        }
        if (!w2.allFinite() || !w1.allFinite())
            throw TrainingError("fit_surrogate: training diverged (non-finite weights)");
    }

    auto mse_over = [&](std::size_t lo, std::size_t hi, double* sq_err, double* sq_target) {
        double err = 0.0, tgt = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            auto pred = model.evaluate(dataset[k].v, dataset[k].g);
            for (std::size_t j = 0; j < m; ++j) {
                const double d = pred[j] - dataset[k].i[j];
                err += d * d;
                tgt += dataset[k].i[j] * dataset[k].i[j];
            }
        }
        *sq_err = err;
        *sq_target = tgt;
        return err / static_cast<double>((hi - lo) * m);
    };
    double e = 0.0, t = 0.0;
    model.report_.train_mse = mse_over(0, train, &e, &t);
    if (!std::isfinite(model.report_.train_mse)) throw TrainingError("fit_surrogate: loss is NaN");
    model.report_.train_count = train;
    model.report_.heldout_count = held;
    if (held > 0) {
        model.report_.heldout_mse = mse_over(train, dataset.size(), &e, &t);
        model.report_.heldout_relative_error = t > 0.0 ? std::sqrt(e / t) : 0.0;
        double hm = 0.0;
        for (std::size_t k = train; k < dataset.size(); ++k)
            for (double c : dataset[k].i) hm += c;
        hm /= static_cast<double>(held * m);
        double hv = 0.0;
        for (std::size_t k = train; k < dataset.size(); ++k)
            for (double c : dataset[k].i) hv += (c - hm) * (c - hm);
        model.report_.heldout_variance = hv / static_cast<double>(held * m);
    }
    model.report_.dataset_hash = dataset_hash(dataset);
    return model;
}

}  // namespace xbr::xbar
