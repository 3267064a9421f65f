#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "spcuq/cls_uq.hpp"
#include "spcuq/errors.hpp"
#include "spcuq/experiment.hpp"
#include "spcuq/metrics.hpp"
#include "spcuq/reg_uq.hpp"
#include "spcuq/spa.hpp"
#include "spcuq/weights_io.hpp"

namespace py = pybind11;
using namespace spcuq;

namespace {

std::vector<PredictionInterval> make_intervals(const Vector& lower, const Vector& upper) {
    if (lower.size() != upper.size()) throw ShapeError("interval bounds disagree on size");
    std::vector<PredictionInterval> out(static_cast<size_t>(lower.size()));
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        out[i].lower = lower[i];
        out[i].upper = upper[i];
    }
    return out;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw FileError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RegUqOutput heads_from(double z, double z_upper, double z_lower) {
    RegUqOutput out;
    out.z = z;
    out.z_upper = z_upper;
    out.z_lower = z_lower;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "split-point self-consistency uncertainty core";

    py::register_exception<Error>(m, "SpcuqError", PyExc_RuntimeError);

    // Split-point analysis primitives.
    m.def(
        "empirical_mars",
        [](const Vector& residuals) {
            MarTriple t = empirical_mars(residuals);
            return py::dict(py::arg("total") = t.total, py::arg("upper") = t.upper,
                            py::arg("lower") = t.lower);
        },
        py::arg("residuals"));
    m.def("harmonic_mean", &harmonic_mean, py::arg("a"), py::arg("b"));
    m.def("self_consistency_discrepancy", &self_consistency_discrepancy, py::arg("t"),
          py::arg("samples"));
    m.def(
        "sds",
        [](double total, double upper, double lower) {
            MarTriple t;
            t.total = total;
            t.upper = upper;
            t.lower = lower;
            return sds(t);
        },
        py::arg("total"), py::arg("upper"), py::arg("lower"));
    m.def("sds_classification", &sds_classification, py::arg("softmax_row"), py::arg("z_total"));
    m.def(
        "ood_threshold",
        [](const std::vector<double>& scores, double alpha) {
            OodThreshold t = ood_threshold(scores, alpha);
            return py::dict(py::arg("cutoff") = t.cutoff, py::arg("alpha") = t.alpha);
        },
        py::arg("scores"), py::arg("alpha") = 0.95);
    m.def("quantile_type7", &quantile_type7, py::arg("values"), py::arg("p"));

    // Regression interval construction and calibration.
    m.def(
        "reg_interval",
        [](double prediction, double q_upper, double q_lower) {
            RegUqOutput out;
            out.q_upper = q_upper;
            out.q_lower = q_lower;
            PredictionInterval iv = spi(prediction, out);
            return py::make_tuple(iv.lower, iv.upper);
        },
        py::arg("prediction"), py::arg("q_upper"), py::arg("q_lower"));
    m.def(
        "reg_calibration_factors",
        [](double z, double z_upper, double z_lower, double eps) {
            CalibrationFactors f = calibration_factors(heads_from(z, z_upper, z_lower), eps);
            return py::make_tuple(f.upper, f.lower);
        },
        py::arg("z"), py::arg("z_upper"), py::arg("z_lower"), py::arg("eps") = 1e-8);
    m.def(
        "reg_calibrated_interval",
        [](double prediction, double q_upper, double q_lower, double z, double z_upper,
           double z_lower) {
            RegUqOutput out = heads_from(z, z_upper, z_lower);
            out.q_upper = q_upper;
            out.q_lower = q_lower;
            PredictionInterval iv = calibrated_spi(prediction, out, calibration_factors(out));
            return py::make_tuple(iv.lower, iv.upper);
        },
        py::arg("prediction"), py::arg("q_upper"), py::arg("q_lower"), py::arg("z"),
        py::arg("z_upper"), py::arg("z_lower"));
    m.def(
        "sds_regression",
        [](double z, double z_upper, double z_lower) {
            return sds_regression(heads_from(z, z_upper, z_lower));
        },
        py::arg("z"), py::arg("z_upper"), py::arg("z_lower"));

    // Regression UQ head training on frozen features.
    m.def(
        "train_reg_uq",
        [](const Matrix& features, const Vector& residuals, const std::string& weights_path,
           double tau_upper, double tau_lower, const std::vector<int>& hidden_sizes, int epochs,
           int batch_size, std::uint64_t seed) {
            RegUqConfig cfg;
            cfg.tau_upper = tau_upper;
            cfg.tau_lower = tau_lower;
            cfg.hidden_sizes = hidden_sizes;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.seed = seed;
            Mlp net = train_reg_uq(build_reg_training_sets(features, residuals), cfg);
            save_weights(net, weights_path);
        },
        py::arg("features"), py::arg("residuals"), py::arg("weights_path"),
        py::arg("tau_upper") = 0.95, py::arg("tau_lower") = 0.95,
        py::arg("hidden_sizes") = std::vector<int>{64}, py::arg("epochs") = 3000,
        py::arg("batch_size") = 0, py::arg("seed") = 0);
    m.def(
        "predict_reg_uq",
        [](const std::string& weights_path, const Matrix& features) {
            Mlp net = load_weights(weights_path, Activation::relu, OutputActivation::softplus);
            return predict_reg_uq_batch(net, features);
        },
        py::arg("weights_path"), py::arg("features"),
        "Columns: q_upper, q_lower, z, z_upper, z_lower.");

    // Classification calibration.
    m.def(
        "calibrate_prediction",
        [](const Vector& softmax_row, const Vector& z_total, const Vector& z_upper,
           const Vector& z_lower, double delta_0) {
            ClsCalibrationOutput out;
            out.z_total = z_total;
            out.z_upper = z_upper;
            out.z_lower = z_lower;
            CalibrationGate gate = calibration_quality(out, delta_0);
            CalibratedPrediction cal = calibrate_prediction(softmax_row, out, gate);
            return py::dict(py::arg("raw") = cal.raw, py::arg("normalized") = cal.normalized,
                            py::arg("corrected") = cal.corrected,
                            py::arg("delta_c") = gate.delta_c, py::arg("applied") = gate.applied);
        },
        py::arg("softmax_row"), py::arg("z_total"), py::arg("z_upper"), py::arg("z_lower"),
        py::arg("delta_0") = 0.01);
    m.def("predictive_entropy", &predictive_entropy, py::arg("probs"));

    // Metrics.
    m.def("rmse", &rmse, py::arg("predictions"), py::arg("targets"));
    m.def(
        "accuracy",
        [](const std::vector<int>& predicted, const std::vector<int>& actual) {
            return accuracy(predicted, actual);
        },
        py::arg("predicted"), py::arg("actual"));
    m.def(
        "winkler_score",
        [](const Vector& lower, const Vector& upper, const Vector& targets, double alpha) {
            return winkler_score(make_intervals(lower, upper), targets, alpha);
        },
        py::arg("lower"), py::arg("upper"), py::arg("targets"), py::arg("alpha"));
    m.def(
        "picp",
        [](const Vector& lower, const Vector& upper, const Vector& targets) {
            return picp(make_intervals(lower, upper), targets);
        },
        py::arg("lower"), py::arg("upper"), py::arg("targets"));
    m.def(
        "piece",
        [](const Vector& lower, const Vector& upper, const Vector& targets, double alpha,
           int n_bins) {
            BinnedScore s = piece(make_intervals(lower, upper), targets, alpha, n_bins);
            return py::dict(py::arg("value") = s.value, py::arg("bins_used") = s.bins_used,
                            py::arg("fallback") = s.fallback);
        },
        py::arg("lower"), py::arg("upper"), py::arg("targets"), py::arg("alpha"),
        py::arg("n_bins") = 10);
    m.def(
        "piece_split",
        [](const Vector& lower, const Vector& upper, const Vector& predictions,
           const Vector& targets, double tau_upper, double tau_lower) {
            SplitCoverage s = piece_split(make_intervals(lower, upper), predictions, targets,
                                          tau_upper, tau_lower);
            return py::dict(py::arg("piece_upper") = s.piece_upper,
                            py::arg("piece_lower") = s.piece_lower,
                            py::arg("coverage_upper") = s.coverage_upper,
                            py::arg("coverage_lower") = s.coverage_lower);
        },
        py::arg("lower"), py::arg("upper"), py::arg("predictions"), py::arg("targets"),
        py::arg("tau_upper") = 0.95, py::arg("tau_lower") = 0.95);
    m.def(
        "ece",
        [](const Vector& confidences, const std::vector<bool>& correct, int n_bins) {
            return ece(confidences, correct, n_bins);
        },
        py::arg("confidences"), py::arg("correct"), py::arg("n_bins") = 15);
    m.def("auroc", &auroc, py::arg("positive_scores"), py::arg("negative_scores"));
    m.def("spearman", &spearman, py::arg("a"), py::arg("b"));

    // Experiment runner; returns the report JSON text.
    m.def(
        "run_experiment",
        [](const std::string& config_json, int parallel_workers) {
            ExperimentConfig cfg = parse_config(config_json);
            run_experiment(cfg, parallel_workers);
            return read_text(cfg.output_dir + "/report.json");
        },
        py::arg("config_json"), py::arg("parallel_workers") = 1);
    m.def(
        "validate_config",
        [](const std::string& config_json) { return config_to_json(parse_config(config_json)); },
        py::arg("config_json"), "Parses, validates, and echoes the normalized config.");
    m.def("render_report", &render_report, py::arg("output_dir"));
}
