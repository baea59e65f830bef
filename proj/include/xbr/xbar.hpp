#pragma once

// Crossbar transfer functions: exact dot product, circuit-level nodal analysis of the
// resistive network with peripheral and wire parasitics, and the Non-ideality Factor.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xbr::xbar {

enum class DeviceLaw {
    linear,  // I = G * V
    sinh,    // I = G * v0 * sinh(V / v0); reduces to linear for |V| << v0
};

std::string to_string(DeviceLaw law);
DeviceLaw parse_device_law(const std::string& name);

struct CrossbarConfig {
    std::size_t rows = 64;
    std::size_t cols = 64;
    double r_on = 100e3;     // ohms, minimum device resistance
    double r_ratio = 10.0;   // R_OFF / R_ON
    double r_source = 0.0;   // ohms, driver resistance per row
    double r_sink = 0.0;     // ohms, sense resistance per column
    double r_wire = 0.0;     // ohms, per wire segment between adjacent cells
    double v_max = 0.25;     // volts, DAC full scale
    DeviceLaw device = DeviceLaw::linear;
    double device_v0 = 0.25;  // volts, knee of the sinh law

    double g_max() const { return 1.0 / r_on; }
    double g_min() const { return g_max() / r_ratio; }
    bool parasitic_free() const { return r_source == 0.0 && r_sink == 0.0 && r_wire == 0.0; }

    // Throws ConfigError listing every violated constraint.
    void validate() const;
};

// Dense row-major rows x cols matrix of conductances (siemens).
class ConductanceMatrix {
public:
    ConductanceMatrix() = default;
    ConductanceMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), g_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t i, std::size_t j) { return g_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return g_[i * cols_ + j]; }
    std::span<const double> values() const { return g_; }
    std::span<double> values() { return g_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> g_;
};

// Programs a plane of cell levels (0 .. 2^level_bits - 1, row-major plane_rows x plane_cols)
// onto a full config.rows x config.cols crossbar with the linear level map
// G = G_min + s * (G_max - G_min) / (2^level_bits - 1). Cells outside the plane stay at G_min.
ConductanceMatrix program(std::span<const std::uint16_t> levels, std::size_t plane_rows, std::size_t plane_cols,
                          int level_bits, const CrossbarConfig& config);

// I_j = sum_i V_i G_ij.
std::vector<double> ideal_mvm(std::span<const double> v, const ConductanceMatrix& g);

struct SolveOptions {
    int max_iterations = 50;
    double tolerance = 1e-10;  // relative residual
};

struct NodalResult {
    std::vector<double> column_currents;  // current collected by each column
    std::vector<double> source_currents;  // current drawn from each row driver
    std::vector<double> sink_currents;    // current through each column's sink branch
    double residual = 0.0;                // relative KCL residual at convergence
    int iterations = 0;
};

// Full nodal analysis of the crossbar: every cell joins a row-wire node and a column-wire
// node; adjacent nodes on a line are linked by R_wire; row i is driven by V_i through
// R_source at column 0; column j is terminated through R_sink at row rows-1 to 0 V.
// Zero resistances merge nodes exactly. Nonlinear device laws use Newton iteration and
// throw NumericalError (with the residual) when they fail to converge.
NodalResult solve_nodal(std::span<const double> v, const ConductanceMatrix& g, const CrossbarConfig& config,
                        const SolveOptions& options = {});

std::vector<double> nonideal_mvm_nodal(std::span<const double> v, const ConductanceMatrix& g,
                                       const CrossbarConfig& config);

// For linear devices the network is linear in V, so I = V * T for an effective matrix T.
// Computed with one factorization and one solve per row.
ConductanceMatrix nodal_transfer_matrix(const ConductanceMatrix& g, const CrossbarConfig& config);

// A crossbar transfer function I = f(V, G).
class CrossbarModel {
public:
    virtual ~CrossbarModel() = default;
    virtual std::vector<double> mvm(std::span<const double> v, const ConductanceMatrix& g) const = 0;
    virtual std::string name() const = 0;
};

class IdealModel final : public CrossbarModel {
public:
    std::vector<double> mvm(std::span<const double> v, const ConductanceMatrix& g) const override;
    std::string name() const override { return "ideal"; }
};

class NodalModel final : public CrossbarModel {
public:
    explicit NodalModel(CrossbarConfig config) : config_(config) {}
    std::vector<double> mvm(std::span<const double> v, const ConductanceMatrix& g) const override;
    std::string name() const override { return "nodal"; }
    const CrossbarConfig& config() const { return config_; }

private:
    CrossbarConfig config_;
};

struct NfReport {
    double nf = 0.0;
    std::size_t columns_used = 0;
    std::size_t columns_excluded = 0;
};

inline constexpr double kNfExclusionThreshold = 1e-12;  // amperes

// NF = mean over samples and columns of (I_ideal - I_model) / I_ideal, with V uniform on
// [0, V_max] and G uniform on [G_min, G_max]. Columns with |I_ideal| below the exclusion
// threshold are skipped; if all are skipped a NumericalError is thrown.
NfReport compute_nf(const CrossbarModel& model, const CrossbarConfig& config, std::size_t samples,
                    std::uint64_t seed);

struct CalibrationTarget {
    std::size_t size = 64;  // square crossbar side
    double nf = 0.26;
};

struct CalibrationResult {
    double r_peripheral = 0.0;  // R_source = R_sink
    double r_wire = 0.0;
    std::vector<std::pair<CalibrationTarget, double>> achieved;  // target, achieved NF
};

// Fits the parasitics of `base` to the targets. With one target, R_wire is bisected with the
// peripheral resistances held at their base values. With two targets (smaller first), the
// peripheral resistance is bisected to hit the first target for each trial R_wire, and R_wire
// is bisected so that the second target is met.
CalibrationResult calibrate_parasitics(const CrossbarConfig& base, std::span<const CalibrationTarget> targets,
                                       std::size_t samples, std::uint64_t seed, double nf_tolerance = 1e-3);

// Default parasitics for the two reference models (32x32 and 64x64 at R_ON = 100k), produced by
// calibrate_parasitics with targets NF 0.14 / 0.26, 16 samples, seed 1.
CrossbarConfig calibrated_config(std::size_t size);

}  // namespace xbr::xbar
