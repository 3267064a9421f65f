#include "spcuq/reg_uq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spcuq/log.hpp"
#include "spcuq/train.hpp"

namespace spcuq {

CoverageMode resolve_coverage_mode(const RegUqConfig& config, int n_rows) {
    if (config.coverage_mode) return *config.coverage_mode;
    int effective = (config.batch_size <= 0 || config.batch_size >= n_rows) ? n_rows : config.batch_size;
    return effective >= 64 ? CoverageMode::per_batch : CoverageMode::full_set;
}

RegTrainingSets build_reg_training_sets(const Matrix& features, const Vector& residuals) {
    if (features.rows() != residuals.size()) {
        throw ShapeError("features and residuals disagree on row count");
    }
    ResidualSets sets = partition_residuals(residuals);
    if (sets.upper.empty()) throw SideUndefinedError(Side::upper, "no positive residuals to train on");
    if (sets.lower.empty()) throw SideUndefinedError(Side::lower, "no negative residuals to train on");
    RegTrainingSets out;
    out.zero_count = sets.zero_count;
    int n = static_cast<int>(sets.all.size());
    out.features = Matrix(n, features.cols());
    out.abs_residuals = Vector(n);
    out.is_upper.resize(n);
    for (int i = 0; i < n; ++i) {
        int idx = sets.all[i];
        out.features.row(i) = features.row(idx);
        out.abs_residuals[i] = std::abs(residuals[idx]);
        out.is_upper[i] = residuals[idx] > 0.0 ? 1 : 0;
    }
    return out;
}

QrLossResult qr_loss(const Vector& predicted, const Vector& targets, double tau, double coverage) {
    if (predicted.size() != targets.size()) throw ShapeError("qr loss inputs disagree on size");
    if (predicted.size() == 0) throw InsufficientDataError("qr loss over an empty set");
    if (!(tau > 0.0) || !(tau < 1.0)) throw DomainError("tau must lie in (0, 1)");
    int n = static_cast<int>(predicted.size());
    QrLossResult res;
    res.coverage = coverage;
    res.grad = Vector::Zero(n);
    double inv = 1.0 / static_cast<double>(n);
    if (coverage < tau) {
        // Undercovered: push predictions up on the samples still above them.
        for (int i = 0; i < n; ++i) {
            if (targets[i] > predicted[i]) {
                res.loss += (targets[i] - predicted[i]) * inv;
                res.grad[i] = -inv;
            }
        }
    } else if (coverage > tau) {
        for (int i = 0; i < n; ++i) {
            if (targets[i] < predicted[i]) {
                res.loss += (predicted[i] - targets[i]) * inv;
                res.grad[i] = inv;
            }
        }
    }
    return res;
}

QrLossResult qr_loss(const Vector& predicted, const Vector& targets, double tau) {
    if (predicted.size() != targets.size()) throw ShapeError("qr loss inputs disagree on size");
    if (predicted.size() == 0) throw InsufficientDataError("qr loss over an empty set");
    double covered = 0.0;
    for (Eigen::Index i = 0; i < predicted.size(); ++i) covered += targets[i] <= predicted[i];
    return qr_loss(predicted, targets, tau, covered / static_cast<double>(predicted.size()));
}

namespace {

// Column layout of the five heads.
constexpr int kQUp = 0;
constexpr int kQLo = 1;
constexpr int kZ = 2;
constexpr int kZUp = 3;
constexpr int kZLo = 4;

double side_coverage(const Mlp& net, const RegTrainingSets& sets, int head, bool upper) {
    Matrix pred = forward(net, sets.features);
    long covered = 0, count = 0;
    for (int i = 0; i < sets.rows(); ++i) {
        if ((sets.is_upper[i] != 0) != upper) continue;
        ++count;
        covered += sets.abs_residuals[i] <= pred(i, head);
    }
    return static_cast<double>(covered) / static_cast<double>(count);
}

}  // namespace

Mlp train_reg_uq(const RegTrainingSets& sets, const RegUqConfig& config) {
    int n = sets.rows();
    if (n == 0) throw InsufficientDataError("no rows with nonzero residuals");
    bool any_up = false, any_lo = false;
    for (char c : sets.is_upper) (c ? any_up : any_lo) = true;
    if (!any_up) throw SideUndefinedError(Side::upper, "no positive residuals to train on");
    if (!any_lo) throw SideUndefinedError(Side::lower, "no negative residuals to train on");
    if (!(config.tau_upper > 0.0) || !(config.tau_upper < 1.0) || !(config.tau_lower > 0.0) ||
        !(config.tau_lower < 1.0)) {
        throw DomainError("tau must lie in (0, 1)");
    }
    if (config.epochs < 0) throw ConfigError("epochs must be non-negative");

    MlpSpec spec;
    spec.layer_sizes.push_back(static_cast<int>(sets.features.cols()));
    for (int h : config.hidden_sizes) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(5);
    spec.activation = config.activation;
    spec.output_activation = OutputActivation::softplus;
    spec.seed = config.seed;
    Mlp net = mlp_init(spec);
    OptimizerState opt = make_optimizer(net, config.optimizer);
    CoverageMode mode = resolve_coverage_mode(config, n);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch : make_batches(n, config.batch_size, config.seed, epoch)) {
            int bn = static_cast<int>(batch.size());
            Matrix xb(bn, sets.features.cols());
            Vector tb(bn);
            std::vector<int> up_rows, lo_rows;
            for (int i = 0; i < bn; ++i) {
                xb.row(i) = sets.features.row(batch[i]);
                tb[i] = sets.abs_residuals[batch[i]];
                (sets.is_upper[batch[i]] ? up_rows : lo_rows).push_back(i);
            }
            ForwardCache cache;
            Matrix pred = forward_cached(net, xb, cache);
            Matrix grad = Matrix::Zero(bn, 5);

            // Quantile heads see only their side's rows. A full-set batch already
            // holds every side row and the current predictions, so the full-set
            // coverage falls out of (p, t) without another forward pass.
            auto apply_qr = [&](const std::vector<int>& rows, int head, double tau, bool upper) {
                if (rows.empty()) return;
                Vector p(rows.size()), t(rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    p[i] = pred(rows[i], head);
                    t[i] = tb[rows[i]];
                }
                QrLossResult r;
                if (mode != CoverageMode::full_set) {
                    r = qr_loss(p, t, tau);
                } else if (bn == n) {
                    long covered = 0;
                    for (Eigen::Index i = 0; i < t.size(); ++i) covered += t[i] <= p[i];
                    double cov = static_cast<double>(covered) / static_cast<double>(t.size());
                    r = qr_loss(p, t, tau, cov);
                } else {
                    r = qr_loss(p, t, tau, side_coverage(net, sets, head, upper));
                }
                for (std::size_t i = 0; i < rows.size(); ++i) grad(rows[i], head) += r.grad[i];
            };
            apply_qr(up_rows, kQUp, config.tau_upper, true);
            apply_qr(lo_rows, kQLo, config.tau_lower, false);

            // MAR heads: total over every nonzero row, sides over their rows.
            for (int i = 0; i < bn; ++i) {
                grad(i, kZ) += 2.0 * (pred(i, kZ) - tb[i]) / static_cast<double>(bn);
            }
            auto apply_mse = [&](const std::vector<int>& rows, int head) {
                if (rows.empty()) return;
                double inv = 1.0 / static_cast<double>(rows.size());
                for (int i : rows) grad(i, head) += 2.0 * (pred(i, head) - tb[i]) * inv;
            };
            apply_mse(up_rows, kZUp);
            apply_mse(lo_rows, kZLo);

            Gradients grads = backward_cached(net, cache, grad);
            optimizer_step(net, grads, opt);
        }
    }
    if (log_level() <= LogLevel::debug) {
        Matrix pred = forward(net, sets.features);
        double mse = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = pred(i, kZ) - sets.abs_residuals[i];
            mse += d * d;
        }
        log_debug("reg uq trained: z head mse " + std::to_string(mse / n));
    }
    return net;
}

Matrix predict_reg_uq_batch(const Mlp& net, const Matrix& features) {
    if (net.output_dim() != 5) throw ShapeError("not a five-head uq network");
    return forward(net, features);
}

RegUqOutput predict_reg_uq(const Mlp& net, const Vector& feature_row) {
    Matrix row = feature_row.transpose();
    Matrix out = predict_reg_uq_batch(net, row);
    RegUqOutput o;
    o.q_upper = out(0, kQUp);
    o.q_lower = out(0, kQLo);
    o.z = out(0, kZ);
    o.z_upper = out(0, kZUp);
    o.z_lower = out(0, kZLo);
    return o;
}

PredictionInterval spi(double prediction, const RegUqOutput& out) {
    PredictionInterval iv;
    iv.lower = prediction - out.q_lower;
    iv.upper = prediction + out.q_upper;
    iv.calibrated = false;
    return iv;
}

CalibrationFactors calibration_factors(const RegUqOutput& out, double eps) {
    CalibrationFactors f;
    auto scale = [eps](double z, double z_own, double z_other) {
        if (z_own <= eps) return 1.0;
        double denom = 2.0 * z_other - z;
        if (denom <= eps) return 1.0;
        double implied = z * z_other / denom;
        if (implied <= 0.0) return 1.0;
        return std::max(z_own, implied) / z_own;
    };
    f.upper = scale(out.z, out.z_upper, out.z_lower);
    f.lower = scale(out.z, out.z_lower, out.z_upper);
    return f;
}

PredictionInterval calibrated_spi(double prediction, const RegUqOutput& out,
                                  const CalibrationFactors& factors) {
    PredictionInterval iv;
    iv.lower = prediction - factors.lower * out.q_lower;
    iv.upper = prediction + factors.upper * out.q_upper;
    iv.calibrated = true;
    return iv;
}

double sds_regression(const RegUqOutput& out) {
    MarTriple m;
    m.total = out.z;
    m.upper = out.z_upper;
    m.lower = out.z_lower;
    return sds(m);
}

}  // namespace spcuq
