#include <doctest.h>

#include <cmath>
#include <random>

#include "spcuq/cls_uq.hpp"
#include "spcuq/errors.hpp"

using namespace spcuq;

TEST_SUITE("cls_uq") {

TEST_CASE("residual targets follow the sign split with zeros kept") {
    Matrix softmax(2, 3), onehot(2, 3);
    softmax << 0.7, 0.2, 0.1, 0.0, 1.0, 0.0;
    onehot << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
    ClsTargets t = build_cls_targets(softmax, onehot);
    CHECK(t.abs_residuals(0, 0) == doctest::Approx(0.3));
    CHECK(t.pos_residuals(0, 0) == doctest::Approx(0.3));
    CHECK(t.neg_residuals(0, 0) == 0.0);
    CHECK(t.abs_residuals(0, 1) == doctest::Approx(0.2));
    CHECK(t.pos_residuals(0, 1) == 0.0);
    CHECK(t.neg_residuals(0, 1) == doctest::Approx(0.2));
    // Exact prediction keeps explicit zero rows in every set.
    CHECK(t.abs_residuals.row(1).isZero());
    CHECK(t.pos_residuals.row(1).isZero());
    CHECK(t.neg_residuals.row(1).isZero());

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        Matrix p(4, 3), y = Matrix::Zero(4, 3);
        for (int i = 0; i < 4; ++i) {
            double a = dist(rng), b = dist(rng), c = dist(rng);
            double s = a + b + c;
            p(i, 0) = a / s;
            p(i, 1) = b / s;
            p(i, 2) = c / s;
            y(i, static_cast<int>(rng() % 3)) = 1.0;
        }
        ClsTargets tt = build_cls_targets(p, y);
        CHECK((tt.abs_residuals - tt.pos_residuals - tt.neg_residuals).cwiseAbs().maxCoeff() <
              1e-15);
        CHECK(tt.pos_residuals.minCoeff() >= 0.0);
        CHECK(tt.neg_residuals.minCoeff() >= 0.0);
    }

    Matrix bad = softmax;
    bad(0, 0) = 1.2;
    CHECK_THROWS_AS(build_cls_targets(bad, onehot), DomainError);
    Matrix not_onehot = onehot;
    not_onehot(0, 0) = 0.4;
    CHECK_THROWS_AS(build_cls_targets(softmax, not_onehot), DomainError);
    CHECK_THROWS_AS(build_cls_targets(softmax, Matrix::Zero(2, 2)), ShapeError);
}

TEST_CASE("expected targets satisfy the binary calibration identities") {
    // Expectation over y ~ Bernoulli(P) built from the two one-hot rows of a
    // two-class problem, weighted P and 1-P.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(0.01, 0.99);
    for (int rep = 0; rep < 500; ++rep) {
        double P = dist(rng), yt = dist(rng);
        Matrix softmax(2, 2), onehot(2, 2);
        softmax << yt, 1.0 - yt, yt, 1.0 - yt;
        onehot << 1.0, 0.0, 0.0, 1.0;
        ClsTargets t = build_cls_targets(softmax, onehot);
        // Class 0 columns: expectation weights are P for row 0, 1-P for row 1.
        double mar = P * t.abs_residuals(0, 0) + (1.0 - P) * t.abs_residuals(1, 0);
        double mar_up = P * t.pos_residuals(0, 0) + (1.0 - P) * t.pos_residuals(1, 0);
        double mar_lo = P * t.neg_residuals(0, 0) + (1.0 - P) * t.neg_residuals(1, 0);
        CHECK(mar == doctest::Approx(P * (1.0 - yt) + (1.0 - P) * yt).epsilon(1e-12));
        CHECK(mar == doctest::Approx(mar_up + mar_lo).epsilon(1e-12));
        CHECK(yt + mar_up - mar_lo == doctest::Approx(P).epsilon(1e-12));
    }
}

TEST_CASE("gate applies only under the consistency tolerance") {
    ClsCalibrationOutput o;
    o.z_total = Vector(2);
    o.z_upper = Vector(2);
    o.z_lower = Vector(2);
    o.z_total << 0.4, 0.2;
    o.z_upper << 0.25, 0.05;
    o.z_lower << 0.151, 0.15;
    // delta = |0.4-0.401| + |0.2-0.2| = 0.001
    CalibrationGate gate = calibration_quality(o, 0.01);
    CHECK(gate.delta_c == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(gate.applied);

    CalibrationGate tight = calibration_quality(o, 0.0005);
    CHECK_FALSE(tight.applied);

    o.z_lower << 0.5, 0.15;
    CHECK_FALSE(calibration_quality(o, 0.01).applied);
}

TEST_CASE("calibration shifts, clamps, and renormalizes") {
    Vector softmax(2);
    softmax << 0.9, 0.1;
    ClsCalibrationOutput o;
    o.z_total = Vector::Zero(2);
    o.z_upper = Vector(2);
    o.z_lower = Vector(2);
    o.z_upper << 0.05, 0.2;
    o.z_lower << 0.1, 0.0;

    CalibrationGate open;
    open.applied = true;
    CalibratedPrediction cp = calibrate_prediction(softmax, o, open);
    CHECK(cp.corrected);
    CHECK(cp.raw[0] == doctest::Approx(0.85));  // 0.9 + 0.05 - 0.1
    CHECK(cp.raw[1] == doctest::Approx(0.3));   // 0.1 + 0.2 - 0.0
    CHECK(cp.normalized.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cp.normalized[0] == doctest::Approx(0.85 / 1.15).epsilon(1e-12));

    CalibrationGate closed;
    closed.applied = false;
    CalibratedPrediction same = calibrate_prediction(softmax, o, closed);
    CHECK_FALSE(same.corrected);
    CHECK(same.raw == softmax);

    // Corrections land inside [1e-9, 1] regardless of the shift size.
    o.z_lower << 5.0, 0.0;
    o.z_upper << 0.0, 5.0;
    CalibratedPrediction clamped = calibrate_prediction(softmax, o, open);
    CHECK(clamped.raw[0] == doctest::Approx(1e-9));
    CHECK(clamped.raw[1] == doctest::Approx(1.0));
}

TEST_CASE("entropy anchors") {
    Vector uniform = Vector::Constant(4, 0.25);
    CHECK(predictive_entropy(uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    Vector onehot(3);
    onehot << 1.0, 0.0, 0.0;
    CHECK(predictive_entropy(onehot) == doctest::Approx(0.0));
    Vector bad(2);
    bad << -0.1, 1.1;
    CHECK_THROWS_AS(predictive_entropy(bad), DomainError);
}

TEST_CASE("mar heads fit groupwise residual means") {
    // Two feature groups with different per-class |r| levels.
    int n = 400;
    Matrix feats = Matrix::Zero(n, 2);
    Matrix abs_r(n, 2);
    for (int i = 0; i < n; ++i) {
        int g = i % 2;
        feats(i, g) = 1.0;
        abs_r(i, 0) = g == 0 ? 0.1 : 0.4;
        abs_r(i, 1) = g == 0 ? 0.3 : 0.2;
    }
    ClsUqConfig cfg;
    cfg.hidden_sizes = {8};
    cfg.epochs = 3000;
    cfg.seed = 9;
    Mlp head = train_total_mar_head(feats, abs_r, cfg);
    REQUIRE(head.output_dim() == 2);
    Vector g0(2), g1(2);
    g0 << 1.0, 0.0;
    g1 << 0.0, 1.0;
    Matrix out0 = forward(head, g0.transpose());
    Matrix out1 = forward(head, g1.transpose());
    CHECK(out0(0, 0) == doctest::Approx(0.1).epsilon(0.2));
    CHECK(out0(0, 1) == doctest::Approx(0.3).epsilon(0.2));
    CHECK(out1(0, 0) == doctest::Approx(0.4).epsilon(0.2));
    CHECK(out1(0, 1) == doctest::Approx(0.2).epsilon(0.2));
}

TEST_CASE("calibration head stacks the three target blocks") {
    int n = 300;
    Matrix feats = Matrix::Ones(n, 1);
    ClsTargets targets;
    targets.abs_residuals = Matrix::Constant(n, 2, 0.3);
    targets.pos_residuals = Matrix::Constant(n, 2, 0.2);
    targets.neg_residuals = Matrix::Constant(n, 2, 0.1);
    ClsUqConfig cfg;
    cfg.hidden_sizes = {8};
    cfg.epochs = 2500;
    cfg.seed = 11;
    Mlp head = train_calibration_head(feats, targets, cfg);
    REQUIRE(head.output_dim() == 6);

    Vector row = Vector::Ones(1);
    ClsCalibrationOutput out = predict_calibration(head, row);
    REQUIRE(out.z_total.size() == 2);
    CHECK(out.z_total[0] == doctest::Approx(0.3).epsilon(0.15));
    CHECK(out.z_upper[0] == doctest::Approx(0.2).epsilon(0.15));
    CHECK(out.z_lower[1] == doctest::Approx(0.1).epsilon(0.2));

    Mlp not_triple = mlp_init({{1, 4, 4}, Activation::relu, OutputActivation::softplus, 2});
    CHECK_THROWS_AS(predict_calibration(not_triple, row), ShapeError);
}

}  // TEST_SUITE
