#pragma once

#include "spcuq/mlp.hpp"
#include "spcuq/optimizer.hpp"

namespace spcuq {

// Per-class residual targets r = onehot - softmax, zeros included.
// abs = pos + neg holds row-wise by construction.
struct ClsTargets {
    Matrix abs_residuals;
    Matrix pos_residuals;
    Matrix neg_residuals;
};

ClsTargets build_cls_targets(const Matrix& softmax, const Matrix& onehot);

struct ClsUqConfig {
    std::vector<int> hidden_sizes = {64};
    Activation activation = Activation::relu;
    int epochs = 2000;
    int batch_size = 0;  // 0 means full batch
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    double delta_0 = 0.01;
};

// K softplus outputs regressing |r| per class; feeds the epistemic score.
Mlp train_total_mar_head(const Matrix& features, const Matrix& abs_residuals,
                         const ClsUqConfig& config);

// 3K softplus outputs (z, z_upper, z_lower per class) trained on the held-out
// calibration rows.
Mlp train_calibration_head(const Matrix& calib_features, const ClsTargets& targets,
                           const ClsUqConfig& config);

struct ClsCalibrationOutput {
    Vector z_total;
    Vector z_upper;
    Vector z_lower;
};

ClsCalibrationOutput predict_calibration(const Mlp& net, const Vector& feature_row);

struct CalibrationGate {
    double delta_c = 0.0;
    double delta_0 = 0.01;
    bool applied = false;  // correction used only when delta_c < delta_0
};

CalibrationGate calibration_quality(const ClsCalibrationOutput& out, double delta_0 = 0.01);

// raw keeps per-class values (clamped to [1e-9, 1]) for calibration error;
// normalized rescales them to sum 1 for entropy.
struct CalibratedPrediction {
    Vector raw;
    Vector normalized;
    bool corrected = false;
};

CalibratedPrediction calibrate_prediction(const Vector& softmax_row,
                                          const ClsCalibrationOutput& out,
                                          const CalibrationGate& gate);

double predictive_entropy(const Vector& probs);

}  // namespace spcuq
