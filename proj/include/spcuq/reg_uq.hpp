#pragma once

#include <optional>

#include "spcuq/metrics.hpp"
#include "spcuq/mlp.hpp"
#include "spcuq/optimizer.hpp"
#include "spcuq/spa.hpp"

namespace spcuq {

enum class CoverageMode { per_batch, full_set };

struct RegUqConfig {
    double tau_upper = 0.95;
    double tau_lower = 0.95;
    std::vector<int> hidden_sizes = {64};
    Activation activation = Activation::relu;
    int epochs = 3000;
    int batch_size = 0;  // 0 means full batch
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    // Unset derives from batch size: per-batch when batches hold >= 64 rows.
    std::optional<CoverageMode> coverage_mode;
};

CoverageMode resolve_coverage_mode(const RegUqConfig& config, int n_rows);

// The quantile and MAR side sets share rows, so one copy with a side mask.
// Rows keep the original sample order; zero residuals are dropped but counted.
struct RegTrainingSets {
    Matrix features;
    Vector abs_residuals;
    std::vector<char> is_upper;
    int zero_count = 0;

    int rows() const { return static_cast<int>(features.rows()); }
};

RegTrainingSets build_reg_training_sets(const Matrix& features, const Vector& residuals);

struct QrLossResult {
    double loss = 0.0;
    Vector grad;      // d loss / d predicted
    double coverage = 0.0;
};

// Coverage-driven pinball variant: pushes predictions up while the batch is
// undercovered and down while overcovered; exactly at tau the loss is zero.
QrLossResult qr_loss(const Vector& predicted, const Vector& targets, double tau);
// Branch on coverage measured elsewhere (full-set mode).
QrLossResult qr_loss(const Vector& predicted, const Vector& targets, double tau, double coverage);

// Head order: q_upper, q_lower, z, z_upper, z_lower. All softplus outputs.
Mlp train_reg_uq(const RegTrainingSets& sets, const RegUqConfig& config);

struct RegUqOutput {
    double q_upper = 0.0;
    double q_lower = 0.0;
    double z = 0.0;
    double z_upper = 0.0;
    double z_lower = 0.0;
};

RegUqOutput predict_reg_uq(const Mlp& net, const Vector& feature_row);
Matrix predict_reg_uq_batch(const Mlp& net, const Matrix& features);  // n x 5

PredictionInterval spi(double prediction, const RegUqOutput& out);

struct CalibrationFactors {
    double upper = 1.0;
    double lower = 1.0;
};

// Self-consistency implied scale per side, never below 1; degenerate
// denominators or non-positive implied MARs fall back to 1.
CalibrationFactors calibration_factors(const RegUqOutput& out, double eps = 1e-8);

PredictionInterval calibrated_spi(double prediction, const RegUqOutput& out,
                                  const CalibrationFactors& factors);

double sds_regression(const RegUqOutput& out);

}  // namespace spcuq
