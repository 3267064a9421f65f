#include "spcuq/cls_uq.hpp"

#include <cmath>
#include <string>

#include "spcuq/errors.hpp"
#include "spcuq/train.hpp"

namespace spcuq {

ClsTargets build_cls_targets(const Matrix& softmax, const Matrix& onehot) {
    if (softmax.rows() != onehot.rows() || softmax.cols() != onehot.cols()) {
        throw ShapeError("softmax and onehot matrices disagree on shape");
    }
    if (softmax.size() == 0) throw InsufficientDataError("no rows to build targets from");
    for (Eigen::Index i = 0; i < softmax.rows(); ++i) {
        for (Eigen::Index k = 0; k < softmax.cols(); ++k) {
            double p = softmax(i, k);
            if (!(p >= 0.0) || !(p <= 1.0)) throw DomainError("softmax entries must lie in [0, 1]");
            double y = onehot(i, k);
            if (y != 0.0 && y != 1.0) throw DomainError("onehot entries must be 0 or 1");
        }
    }
    Matrix r = onehot - softmax;
    ClsTargets t;
    t.abs_residuals = r.cwiseAbs();
    t.pos_residuals = r.cwiseMax(0.0);
    t.neg_residuals = (-r).cwiseMax(0.0);
    return t;
}

namespace {

Mlp train_head(const Matrix& features, const Matrix& targets, const ClsUqConfig& config,
               int output_dim) {
    if (features.rows() != targets.rows()) {
        throw ShapeError("features and targets disagree on row count");
    }
    if (features.rows() == 0) throw InsufficientDataError("no rows to train on");
    MlpSpec spec;
    spec.layer_sizes.push_back(static_cast<int>(features.cols()));
    for (int h : config.hidden_sizes) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(output_dim);
    spec.activation = config.activation;
    spec.output_activation = OutputActivation::softplus;
    spec.seed = config.seed;
    Mlp net = mlp_init(spec);
    TrainConfig tc;
    tc.epochs = config.epochs;
    tc.batch_size = config.batch_size;
    tc.optimizer = config.optimizer;
    tc.seed = config.seed;
    train_mse(net, features, targets, tc);
    return net;
}

}  // namespace

Mlp train_total_mar_head(const Matrix& features, const Matrix& abs_residuals,
                         const ClsUqConfig& config) {
    return train_head(features, abs_residuals, config, static_cast<int>(abs_residuals.cols()));
}

Mlp train_calibration_head(const Matrix& calib_features, const ClsTargets& targets,
                           const ClsUqConfig& config) {
    int k = static_cast<int>(targets.abs_residuals.cols());
    Matrix stacked(targets.abs_residuals.rows(), 3 * k);
    stacked << targets.abs_residuals, targets.pos_residuals, targets.neg_residuals;
    return train_head(calib_features, stacked, config, 3 * k);
}

ClsCalibrationOutput predict_calibration(const Mlp& net, const Vector& feature_row) {
    if (net.output_dim() % 3 != 0) throw ShapeError("calibration head output is not three blocks");
    Matrix out = forward(net, feature_row.transpose());
    int k = net.output_dim() / 3;
    ClsCalibrationOutput o;
    o.z_total = out.row(0).segment(0, k).transpose();
    o.z_upper = out.row(0).segment(k, k).transpose();
    o.z_lower = out.row(0).segment(2 * k, k).transpose();
    return o;
}

CalibrationGate calibration_quality(const ClsCalibrationOutput& out, double delta_0) {
    if (!(delta_0 >= 0.0)) throw DomainError("delta_0 must be non-negative");
    if (out.z_total.size() != out.z_upper.size() || out.z_total.size() != out.z_lower.size()) {
        throw ShapeError("calibration output blocks disagree on class count");
    }
    CalibrationGate gate;
    gate.delta_0 = delta_0;
    gate.delta_c = (out.z_total - out.z_upper - out.z_lower).cwiseAbs().sum();
    gate.applied = gate.delta_c < delta_0;
    return gate;
}

CalibratedPrediction calibrate_prediction(const Vector& softmax_row,
                                          const ClsCalibrationOutput& out,
                                          const CalibrationGate& gate) {
    if (softmax_row.size() != out.z_upper.size()) {
        throw ShapeError("softmax row and calibration output disagree on class count");
    }
    CalibratedPrediction res;
    res.corrected = gate.applied;
    res.raw = softmax_row;
    if (gate.applied) res.raw += out.z_upper - out.z_lower;
    // Corrections can push past [0, 1]; clamp, keep the raw values for
    // calibration error, renormalize only for entropy.
    res.raw = res.raw.cwiseMax(1e-9).cwiseMin(1.0);
    double sum = res.raw.sum();
    res.normalized = res.raw / sum;
    return res;
}

double predictive_entropy(const Vector& probs) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
        double p = probs[k];
        if (!(p >= 0.0)) throw DomainError("probabilities must be non-negative");
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

}  // namespace spcuq
