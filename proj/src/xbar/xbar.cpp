#include "xbr/xbar.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "xbr/error.hpp"

namespace xbr::xbar {

namespace {

// Output of `xbar-robust nf-calibrate` with the reference targets (see calibrated_config).
constexpr double kCalibratedPeripheral = 421.31340240741508;
constexpr double kCalibratedWire = 3.5797125646428021;

}  // namespace

std::string to_string(DeviceLaw law) {
    switch (law) {
        case DeviceLaw::linear:
            return "linear";
        case DeviceLaw::sinh:
            return "sinh";
    }
    return "unknown";
}

DeviceLaw parse_device_law(const std::string& name) {
    if (name == "linear") return DeviceLaw::linear;
    if (name == "sinh") return DeviceLaw::sinh;
    throw ConfigError("unknown device_model '" + name + "' (expected linear or sinh)");
}

void CrossbarConfig::validate() const {
    std::vector<std::string> problems;
    if (rows < 1) problems.emplace_back("rows must be >= 1");
    if (cols < 1) problems.emplace_back("cols must be >= 1");
    if (!(r_on > 0.0) || !std::isfinite(r_on)) problems.emplace_back("r_on must be finite and > 0");
    if (!(r_ratio > 1.0) || !std::isfinite(r_ratio)) problems.emplace_back("r_ratio must be finite and > 1");
    for (auto [value, name] : {std::pair{r_source, "r_source"}, {r_sink, "r_sink"}, {r_wire, "r_wire"}})
        if (!(value >= 0.0) || !std::isfinite(value)) problems.push_back(std::string(name) + " must be finite and >= 0");
    if (!(v_max > 0.0)) problems.emplace_back("v_max must be > 0");
    if (device == DeviceLaw::sinh && !(device_v0 > 0.0)) problems.emplace_back("device_v0 must be > 0");
    if (!problems.empty()) {
        std::ostringstream os;
        os << "invalid crossbar config:";
        for (const auto& p : problems) os << "\n  - " << p;
        throw ConfigError(os.str());
    }
}

ConductanceMatrix program(std::span<const std::uint16_t> levels, std::size_t plane_rows, std::size_t plane_cols,
                          int level_bits, const CrossbarConfig& config) {
    if (plane_rows > config.rows || plane_cols > config.cols) {
        std::ostringstream os;
        os << "program: plane " << plane_rows << "x" << plane_cols << " exceeds crossbar " << config.rows << "x"
           << config.cols;
        throw MappingError(os.str());
    }
    if (levels.size() != plane_rows * plane_cols) throw MappingError("program: level count does not match plane dims");
    if (level_bits < 1 || level_bits > 16) throw MappingError("program: level_bits must be in [1,16]");
    const unsigned top = (1u << level_bits) - 1u;
    const double g_min = config.g_min();
    const double step = (config.g_max() - g_min) / static_cast<double>(top);
    ConductanceMatrix g(config.rows, config.cols, g_min);
    for (std::size_t i = 0; i < plane_rows; ++i) {
        for (std::size_t j = 0; j < plane_cols; ++j) {
            const unsigned s = levels[i * plane_cols + j];
            if (s > top) throw MappingError("program: level exceeds 2^W_w - 1");
            g(i, j) = s == top ? config.g_max() : g_min + static_cast<double>(s) * step;
        }
    }
    return g;
}

std::vector<double> ideal_mvm(std::span<const double> v, const ConductanceMatrix& g) {
    if (v.size() != g.rows()) throw ShapeError("ideal_mvm: voltage length does not match crossbar rows");
    std::vector<double> out(g.cols(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i) {
        const double vi = v[i];
        if (vi == 0.0) continue;
        for (std::size_t j = 0; j < g.cols(); ++j) out[j] += vi * g(i, j);
    }
    return out;
}

namespace {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

// Resistive network of one crossbar, reduced to equivalence classes of nodes joined by
// zero-resistance links. Classes touching a driver or ground have fixed potential; classes
// with no conducting path to a fixed class float and carry no current.
class NodalSystem {
public:
    NodalSystem(const ConductanceMatrix& g, const CrossbarConfig& cfg) : g_(g), cfg_(cfg) {
        n_ = g.rows();
        m_ = g.cols();
        const std::size_t total = 2 * n_ * m_ + n_ + 1;
        ground_ = total - 1;

        std::vector<Link> all;
        auto add = [&](std::size_t a, std::size_t b, double r) { all.push_back({a, b, r}); };
        for (std::size_t i = 0; i < n_; ++i) {
            add(source(i), row_node(i, 0), cfg.r_source);
            for (std::size_t j = 0; j + 1 < m_; ++j) add(row_node(i, j), row_node(i, j + 1), cfg.r_wire);
        }
        for (std::size_t j = 0; j < m_; ++j) {
            for (std::size_t i = 0; i + 1 < n_; ++i) add(col_node(i, j), col_node(i + 1, j), cfg.r_wire);
            add(col_node(n_ - 1, j), ground_, cfg.r_sink);
        }

        UnionFind uf(total);
        for (const auto& l : all)
            if (l.r == 0.0) uf.unite(l.a, l.b);
        cls_.resize(total);
        for (std::size_t k = 0; k < total; ++k) cls_[k] = uf.find(k);

        fixed_source_.assign(total, kNone);
        fixed_ground_.assign(total, false);
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t c = cls_[source(i)];
            if (fixed_source_[c] != kNone || fixed_ground_[c])
                throw NumericalError("nodal: drivers shorted together through zero-resistance links");
            fixed_source_[c] = i;
        }
        {
            const std::size_t c = cls_[ground_];
            if (fixed_source_[c] != kNone) throw NumericalError("nodal: driver shorted to ground");
            fixed_ground_[c] = true;
        }

        for (const auto& l : all)
            if (l.r > 0.0) links_.push_back({cls_[l.a], cls_[l.b], 1.0 / l.r});

        // Reachability from fixed classes over conducting branches.
        std::vector<std::vector<std::size_t>> adj(total);
        auto connect = [&](std::size_t a, std::size_t b) {
            if (a == b) return;
            adj[a].push_back(b);
            adj[b].push_back(a);
        };
        for (const auto& l : links_) connect(l.a, l.b);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j)
                if (g(i, j) > 0.0) connect(cls_[row_node(i, j)], cls_[col_node(i, j)]);
        std::vector<bool> reached(total, false);
        std::vector<std::size_t> stack;
        for (std::size_t k = 0; k < total; ++k) {
            if (cls_[k] == k && is_fixed(k) && !reached[k]) {
                reached[k] = true;
                stack.push_back(k);
            }
        }
        while (!stack.empty()) {
            const std::size_t c = stack.back();
            stack.pop_back();
            for (auto nb : adj[c])
                if (!reached[nb]) {
                    reached[nb] = true;
                    stack.push_back(nb);
                }
        }
        index_.assign(total, kNone);
        for (std::size_t k = 0; k < total; ++k)
            if (cls_[k] == k && !is_fixed(k) && reached[k]) index_[k] = unknowns_++;
    }

    std::size_t unknowns() const { return unknowns_; }

    // Potentials of every class root for driver voltages v, linear devices.
    std::vector<double> solve_linear(std::span<const double> v) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns_));
        std::vector<double> pot = fixed_potentials(v);
        if (unknowns_ > 0) {
            factor_linear();
            for (const auto& [p, q, gval] : couplings_) b[p] += gval * pot[q];
            Eigen::VectorXd x = ldlt_.solve(b);
            scatter(x, pot);
        }
        return pot;
    }

    // Effective matrix T with I = V * T (linear devices).
    ConductanceMatrix transfer() {
        ConductanceMatrix t(n_, m_, 0.0);
        Eigen::MatrixXd x;
        if (unknowns_ > 0) {
            factor_linear();
            Eigen::MatrixXd b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(unknowns_), static_cast<Eigen::Index>(n_));
            for (const auto& [p, q, gval] : couplings_)
                if (fixed_source_[q] != kNone) b(p, static_cast<Eigen::Index>(fixed_source_[q])) += gval;
            x = ldlt_.solve(b);
        }
        std::vector<double> pot(cls_.size(), 0.0);
        for (std::size_t k = 0; k < n_; ++k) {
            std::fill(pot.begin(), pot.end(), 0.0);
            for (std::size_t c = 0; c < cls_.size(); ++c)
                if (cls_[c] == c && fixed_source_[c] == k) pot[c] = 1.0;
            if (unknowns_ > 0)
                for (std::size_t c = 0; c < cls_.size(); ++c)
                    if (index_[c] != kNone) pot[c] = x(static_cast<Eigen::Index>(index_[c]), static_cast<Eigen::Index>(k));
            for (std::size_t i = 0; i < n_; ++i)
                for (std::size_t j = 0; j < m_; ++j) t(k, j) += g_(i, j) * (node_pot(pot, row_node(i, j)) - node_pot(pot, col_node(i, j)));
        }
        return t;
    }

    // Newton iteration for a nonlinear device law, starting from the linear solution.
    std::vector<double> solve_newton(std::span<const double> v, const SolveOptions& opt, double* residual,
                                     int* iterations) {
        std::vector<double> pot = solve_linear(v);
        if (unknowns_ == 0) {
            *residual = 0.0;
            *iterations = 0;
            return pot;
        }
        const auto nu = static_cast<Eigen::Index>(unknowns_);
        for (int it = 1; it <= opt.max_iterations; ++it) {
            Eigen::VectorXd f = Eigen::VectorXd::Zero(nu);
            Eigen::VectorXd gross = Eigen::VectorXd::Zero(nu);
            std::vector<Eigen::Triplet<double>> trip;
            auto stamp = [&](std::size_t a, std::size_t b, double current, double slope) {
                // current flows a -> b
                const std::size_t ia = index_[a], ib = index_[b];
                if (ia != kNone) {
                    f[static_cast<Eigen::Index>(ia)] += current;
                    gross[static_cast<Eigen::Index>(ia)] += std::abs(current);
                    trip.emplace_back(ia, ia, slope);
                    if (ib != kNone) trip.emplace_back(ia, ib, -slope);
                }
                if (ib != kNone) {
                    f[static_cast<Eigen::Index>(ib)] -= current;
                    gross[static_cast<Eigen::Index>(ib)] += std::abs(current);
                    trip.emplace_back(ib, ib, slope);
                    if (ia != kNone) trip.emplace_back(ib, ia, -slope);
                }
            };
            for (const auto& l : links_) {
                if (l.a == l.b) continue;
                stamp(l.a, l.b, l.g * (pot[l.a] - pot[l.b]), l.g);
            }
            for (std::size_t i = 0; i < n_; ++i) {
                for (std::size_t j = 0; j < m_; ++j) {
                    const std::size_t a = cls_[row_node(i, j)], b = cls_[col_node(i, j)];
                    if (a == b || g_(i, j) == 0.0) continue;
                    double cur = 0.0, slope = 0.0;
                    device(g_(i, j), pot[a] - pot[b], &cur, &slope);
                    stamp(a, b, cur, slope);
                }
            }
            const double scale = std::max(gross.cwiseAbs().maxCoeff(), 1e-300);
            const double rel = f.cwiseAbs().maxCoeff() / scale;
            *residual = rel;
            *iterations = it - 1;
            if (rel < opt.tolerance) return pot;
            Eigen::SparseMatrix<double> jac(nu, nu);
            jac.setFromTriplets(trip.begin(), trip.end());
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(jac);
            if (solver.info() != Eigen::Success) throw NumericalError("nodal: singular Jacobian in Newton iteration");
            Eigen::VectorXd dx = solver.solve(-f);
            for (std::size_t c = 0; c < cls_.size(); ++c)
                if (index_[c] != kNone) pot[c] += dx[static_cast<Eigen::Index>(index_[c])];
        }
        std::ostringstream os;
        os << "nodal: Newton iteration did not converge after " << opt.max_iterations
           << " iterations (relative residual " << *residual << ")";
        throw NumericalError(os.str());
    }

    NodalResult currents(std::span<const double> v, const std::vector<double>& pot) const {
        NodalResult r;
        r.column_currents.assign(m_, 0.0);
        std::vector<double> row_sum(n_, 0.0);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t j = 0; j < m_; ++j) {
                double cur = 0.0, slope = 0.0;
                device(g_(i, j), node_pot(pot, row_node(i, j)) - node_pot(pot, col_node(i, j)), &cur, &slope);
                r.column_currents[j] += cur;
                row_sum[i] += cur;
            }
        }
        r.source_currents.resize(n_);
        for (std::size_t i = 0; i < n_; ++i)
            r.source_currents[i] =
                cfg_.r_source > 0.0 ? (v[i] - node_pot(pot, row_node(i, 0))) / cfg_.r_source : row_sum[i];
        r.sink_currents.resize(m_);
        for (std::size_t j = 0; j < m_; ++j)
            r.sink_currents[j] =
                cfg_.r_sink > 0.0 ? node_pot(pot, col_node(n_ - 1, j)) / cfg_.r_sink : r.column_currents[j];
        return r;
    }

    double linear_residual(std::span<const double> v, const std::vector<double>& pot) const {
        (void)v;
        std::vector<double> f(cls_.size(), 0.0), gross(cls_.size(), 0.0);
        auto flow = [&](std::size_t a, std::size_t b, double cur) {
            f[a] += cur;
            f[b] -= cur;
            gross[a] += std::abs(cur);
            gross[b] += std::abs(cur);
        };
        for (const auto& l : links_)
            if (l.a != l.b) flow(l.a, l.b, l.g * (pot[l.a] - pot[l.b]));
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j) {
                const std::size_t a = cls_[row_node(i, j)], b = cls_[col_node(i, j)];
                if (a != b) flow(a, b, g_(i, j) * (pot[a] - pot[b]));
            }
        double worst = 0.0, scale = 1e-300;
        for (std::size_t c = 0; c < cls_.size(); ++c) {
            if (index_[c] == kNone) continue;
            worst = std::max(worst, std::abs(f[c]));
            scale = std::max(scale, gross[c]);
        }
        return worst / scale;
    }

private:
    struct Link {
        std::size_t a, b;
        double r;
    };
    struct Branch {
        std::size_t a, b;
        double g;
    };
    struct Coupling {
        std::size_t p;  // unknown index
        std::size_t q;  // fixed class
        double g;
    };

    std::size_t row_node(std::size_t i, std::size_t j) const { return i * m_ + j; }
    std::size_t col_node(std::size_t i, std::size_t j) const { return n_ * m_ + i * m_ + j; }
    std::size_t source(std::size_t i) const { return 2 * n_ * m_ + i; }
    bool is_fixed(std::size_t c) const { return fixed_source_[c] != kNone || fixed_ground_[c]; }
    double node_pot(const std::vector<double>& pot, std::size_t node) const { return pot[cls_[node]]; }

    void device(double g, double dv, double* cur, double* slope) const {
        if (cfg_.device == DeviceLaw::sinh) {
            const double v0 = cfg_.device_v0;
            *cur = g * v0 * std::sinh(dv / v0);
            *slope = g * std::cosh(dv / v0);
        } else {
            *cur = g * dv;
            *slope = g;
        }
    }

    std::vector<double> fixed_potentials(std::span<const double> v) const {
        std::vector<double> pot(cls_.size(), 0.0);
        for (std::size_t c = 0; c < cls_.size(); ++c)
            if (cls_[c] == c && fixed_source_[c] != kNone) pot[c] = v[fixed_source_[c]];
        return pot;
    }

    void scatter(const Eigen::VectorXd& x, std::vector<double>& pot) const {
        for (std::size_t c = 0; c < cls_.size(); ++c)
            if (index_[c] != kNone) pot[c] = x[static_cast<Eigen::Index>(index_[c])];
    }

    void factor_linear() {
        if (factored_) return;
        const auto nu = static_cast<Eigen::Index>(unknowns_);
        std::vector<Eigen::Triplet<double>> trip;
        auto stamp = [&](std::size_t a, std::size_t b, double gval) {
            if (a == b || gval == 0.0) return;
            const std::size_t ia = index_[a], ib = index_[b];
            if (ia != kNone) {
                trip.emplace_back(ia, ia, gval);
                if (ib != kNone)
                    trip.emplace_back(ia, ib, -gval);
                else if (is_fixed(b))
                    couplings_.push_back({ia, b, gval});
            }
            if (ib != kNone) {
                trip.emplace_back(ib, ib, gval);
                if (ia != kNone)
                    trip.emplace_back(ib, ia, -gval);
                else if (is_fixed(a))
                    couplings_.push_back({ib, a, gval});
            }
        };
        for (const auto& l : links_) stamp(l.a, l.b, l.g);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j) stamp(cls_[row_node(i, j)], cls_[col_node(i, j)], g_(i, j));
        Eigen::SparseMatrix<double> a(nu, nu);
        a.setFromTriplets(trip.begin(), trip.end());
        ldlt_.compute(a);
        if (ldlt_.info() != Eigen::Success) throw NumericalError("nodal: singular conductance system");
        factored_ = true;
    }

    const ConductanceMatrix& g_;
    const CrossbarConfig& cfg_;
    std::size_t n_ = 0, m_ = 0, ground_ = 0, unknowns_ = 0;
    std::vector<std::size_t> cls_, fixed_source_, index_;
    std::vector<bool> fixed_ground_;
    std::vector<Branch> links_;
    std::vector<Coupling> couplings_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
    bool factored_ = false;
};

void check_dims(std::span<const double> v, const ConductanceMatrix& g) {
    if (g.rows() == 0 || g.cols() == 0) throw ShapeError("nodal: empty crossbar");
    if (v.size() != g.rows()) throw ShapeError("nodal: voltage length does not match crossbar rows");
}

}  // namespace

NodalResult solve_nodal(std::span<const double> v, const ConductanceMatrix& g, const CrossbarConfig& config,
                        const SolveOptions& options) {
    check_dims(v, g);
    for (double x : v)
        if (!std::isfinite(x)) throw NumericalError("nodal: non-finite drive voltage");
    NodalSystem sys(g, config);
    if (config.device == DeviceLaw::linear) {
        auto pot = sys.solve_linear(v);
        NodalResult r = sys.currents(v, pot);
        r.residual = sys.linear_residual(v, pot);
        r.iterations = 1;
        return r;
    }
    double residual = 0.0;
    int iterations = 0;
    auto pot = sys.solve_newton(v, options, &residual, &iterations);
    NodalResult r = sys.currents(v, pot);
    r.residual = residual;
    r.iterations = iterations;
    return r;
}

std::vector<double> nonideal_mvm_nodal(std::span<const double> v, const ConductanceMatrix& g,
                                       const CrossbarConfig& config) {
    return solve_nodal(v, g, config).column_currents;
}

ConductanceMatrix nodal_transfer_matrix(const ConductanceMatrix& g, const CrossbarConfig& config) {
    if (config.device != DeviceLaw::linear)
        throw UnsupportedOperation("nodal_transfer_matrix: only defined for the linear device law");
    if (g.rows() == 0 || g.cols() == 0) throw ShapeError("nodal: empty crossbar");
    NodalSystem sys(g, config);
    return sys.transfer();
}

std::vector<double> IdealModel::mvm(std::span<const double> v, const ConductanceMatrix& g) const {
    return ideal_mvm(v, g);
}

std::vector<double> NodalModel::mvm(std::span<const double> v, const ConductanceMatrix& g) const {
    return nonideal_mvm_nodal(v, g, config_);
}

NfReport compute_nf(const CrossbarModel& model, const CrossbarConfig& config, std::size_t samples,
                    std::uint64_t seed) {
    if (samples < 1) throw ConfigError("compute_nf: sample count must be >= 1");
    config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> volt(0.0, config.v_max);
    std::uniform_real_distribution<double> cond(config.g_min(), config.g_max());
    NfReport rep;
    double sum = 0.0;
    std::vector<double> v(config.rows);
    for (std::size_t s = 0; s < samples; ++s) {
        for (auto& x : v) x = volt(rng);
        ConductanceMatrix g(config.rows, config.cols);
        for (auto& x : g.values()) x = cond(rng);
        const auto ideal = ideal_mvm(v, g);
        const auto real = model.mvm(v, g);
        for (std::size_t j = 0; j < ideal.size(); ++j) {
            if (std::abs(ideal[j]) < kNfExclusionThreshold) {
                ++rep.columns_excluded;
                continue;
            }
            sum += (ideal[j] - real[j]) / ideal[j];
            ++rep.columns_used;
        }
    }
    if (rep.columns_used == 0) throw NumericalError("compute_nf: every column was excluded (degenerate input)");
    rep.nf = sum / static_cast<double>(rep.columns_used);
    return rep;
}

namespace {

// Finds x >= 0 with f(x) ~= target for non-decreasing f, expanding the bracket upward.
template <typename F>
double solve_increasing(F&& f, double target, double tol, double start = 1.0) {
    double lo = 0.0;
    double f_lo = f(lo);
    if (f_lo >= target) return lo;
    double hi = start;
    double f_hi = f(hi);
    int grow = 0;
    while (f_hi < target) {
        lo = hi;
        f_lo = f_hi;
        hi *= 4.0;
        f_hi = f(hi);
        if (++grow > 40) throw NumericalError("calibration: target NF is not reachable");
    }
    for (int it = 0; it < 80; ++it) {
        const double mid = lo > 0.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        const double fm = f(mid);
        if (std::abs(fm - target) < tol) return mid;
        if (fm < target) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
        if (hi - lo <= 1e-9 * hi) break;
    }
    return std::abs(f_lo - target) < std::abs(f_hi - target) ? lo : hi;
}

}  // namespace

CalibrationResult calibrate_parasitics(const CrossbarConfig& base, std::span<const CalibrationTarget> targets,
                                       std::size_t samples, std::uint64_t seed, double nf_tolerance) {
    if (targets.empty() || targets.size() > 2) throw ConfigError("calibrate_parasitics: expected one or two targets");
    base.validate();
    auto nf_at = [&](std::size_t size, double r_p, double r_w) {
        CrossbarConfig c = base;
        c.rows = c.cols = size;
        c.r_source = c.r_sink = r_p;
        c.r_wire = r_w;
        return compute_nf(NodalModel(c), c, samples, seed).nf;
    };
    CalibrationResult res;
    if (targets.size() == 1) {
        const auto t = targets[0];
        res.r_peripheral = base.r_source;
        CrossbarConfig probe = base;
        auto f = [&](double r_w) {
            probe.rows = probe.cols = t.size;
            probe.r_wire = r_w;
            return compute_nf(NodalModel(probe), probe, samples, seed).nf;
        };
        res.r_wire = solve_increasing(f, t.nf, nf_tolerance);
        probe.r_wire = res.r_wire;
        res.achieved.push_back({t, f(res.r_wire)});
        return res;
    }
    const auto small = targets[0].size <= targets[1].size ? targets[0] : targets[1];
    const auto large = targets[0].size <= targets[1].size ? targets[1] : targets[0];
    auto peripheral_for = [&](double r_w) {
        return solve_increasing([&](double r_p) { return nf_at(small.size, r_p, r_w); }, small.nf, nf_tolerance);
    };
    // R_wire that alone reaches the small target bounds the search.
    const double r_w_max = solve_increasing([&](double r_w) { return nf_at(small.size, 0.0, r_w); }, small.nf,
                                            nf_tolerance * 0.1, 0.1);
    auto large_nf = [&](double r_w) { return nf_at(large.size, peripheral_for(r_w), r_w); };
    double lo = 0.0, hi = r_w_max;
    double f_lo = large_nf(lo), f_hi = large_nf(hi);
    double best = f_lo < large.nf ? lo : hi;
    if (f_lo < large.nf && f_hi > large.nf) {
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double fm = large_nf(mid);
            best = mid;
            if (std::abs(fm - large.nf) < nf_tolerance) break;
            if (fm < large.nf)
                lo = mid;
            else
                hi = mid;
        }
    } else if (f_hi <= large.nf) {
        best = hi;
    }
    res.r_wire = best;
    res.r_peripheral = peripheral_for(best);
    res.achieved.push_back({small, nf_at(small.size, res.r_peripheral, res.r_wire)});
    res.achieved.push_back({large, nf_at(large.size, res.r_peripheral, res.r_wire)});
    return res;
}

CrossbarConfig calibrated_config(std::size_t size) {
    CrossbarConfig c;
    c.rows = c.cols = size;
    c.r_on = 100e3;
    c.r_ratio = 10.0;
    c.r_source = c.r_sink = kCalibratedPeripheral;
    c.r_wire = kCalibratedWire;
    return c;
}

}  // namespace xbr::xbar
