#pragma once

// Learned crossbar transfer function: a two-layer perceptron mapping the concatenated
// (V, G) of one crossbar to its non-ideal column currents, fitted on nodal-solver data.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xbr/xbar.hpp"

namespace xbr::xbar {

struct SurrogateRecord {
    std::vector<double> v;  // rows
    std::vector<double> g;  // rows * cols, row-major
    std::vector<double> i;  // cols
};

// Records produced by nonideal_mvm_nodal on random (V, G) draws (V uniform on [0, V_max],
// G uniform on [G_min, G_max]).
std::vector<SurrogateRecord> generate_surrogate_dataset(const CrossbarConfig& config, std::size_t count,
                                                        std::uint64_t seed);

// Flat little-endian float64 records: rows V values, rows*cols G values, cols I values.
void write_surrogate_dataset(const std::filesystem::path& path, const std::vector<SurrogateRecord>& records);
std::vector<SurrogateRecord> read_surrogate_dataset(const std::filesystem::path& path, std::size_t rows,
                                                    std::size_t cols);

// FNV-1a over the raw record bytes.
std::uint64_t dataset_hash(const std::vector<SurrogateRecord>& records);

struct SurrogateFitOptions {
    std::size_t hidden_units = 64;
    std::size_t epochs = 300;
    std::size_t batch_size = 32;
    double learning_rate = 2e-3;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 1;
};

struct SurrogateFitReport {
    double train_mse = 0.0;           // A^2
    double heldout_mse = 0.0;         // A^2
    double heldout_variance = 0.0;    // variance of held-out targets, A^2
    double heldout_relative_error = 0.0;  // ||pred - target|| / ||target||
    std::size_t train_count = 0;
    std::size_t heldout_count = 0;
    std::uint64_t dataset_hash = 0;
};

class SurrogateModel final : public CrossbarModel {
public:
    SurrogateModel() = default;
    SurrogateModel(const CrossbarConfig& config, std::size_t hidden_units, std::uint64_t seed);

    std::vector<double> mvm(std::span<const double> v, const ConductanceMatrix& g) const override;
    std::string name() const override { return "surrogate"; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t hidden_units() const { return hidden_; }
    std::size_t input_dim() const { return rows_ + rows_ * cols_; }
    const SurrogateFitReport& report() const { return report_; }

    void save(const std::filesystem::path& path) const;
    static SurrogateModel load(const std::filesystem::path& path);

private:
    friend SurrogateModel fit_surrogate(const std::vector<SurrogateRecord>&, const CrossbarConfig&,
                                        const SurrogateFitOptions&);

    void encode(std::span<const double> v, std::span<const double> g, double* out) const;
    std::vector<double> evaluate(std::span<const double> v, std::span<const double> g) const;

    std::size_t rows_ = 0, cols_ = 0, hidden_ = 0;
    double v_max_ = 1.0, g_min_ = 0.0, g_max_ = 1.0;
    double i_mean_ = 0.0, i_std_ = 1.0;  // output standardization, amperes
    std::vector<double> w1_, b1_;  // hidden x input
    std::vector<double> w2_, b2_;  // cols x hidden
    SurrogateFitReport report_;
};

// Adam on mean-squared error with tanh hidden units; the last holdout_fraction of the records
// is held out. Throws TrainingError if the loss becomes non-finite.
SurrogateModel fit_surrogate(const std::vector<SurrogateRecord>& dataset, const CrossbarConfig& config,
                             const SurrogateFitOptions& options = {});

}  // namespace xbr::xbar
