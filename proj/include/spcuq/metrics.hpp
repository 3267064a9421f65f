#pragma once

#include <map>
#include <string>
#include <vector>

#include "spcuq/mlp.hpp"

namespace spcuq {

struct PredictionInterval {
    double lower = 0.0;
    double upper = 0.0;
    bool calibrated = false;
};

double rmse(const Vector& predictions, const Vector& targets);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual);

// Mean of: width, plus 2/alpha times the violation when the target escapes.
double winkler_score(const std::vector<PredictionInterval>& intervals, const Vector& targets,
                     double alpha);

double picp(const std::vector<PredictionInterval>& intervals, const Vector& targets);

struct BinnedScore {
    double value = 0.0;
    int bins_used = 0;
    bool fallback = false;  // set when n < n_bins forced a single bin
};

// Coverage error binned by interval width, equal-frequency bins.
BinnedScore piece(const std::vector<PredictionInterval>& intervals, const Vector& targets,
                  double alpha, int n_bins = 10);

// One-sided coverage over each residual sign set against its tau, as a single
// aggregate per side.
struct SplitCoverage {
    double piece_upper = 0.0;
    double piece_lower = 0.0;
    double coverage_upper = 0.0;
    double coverage_lower = 0.0;
};
SplitCoverage piece_split(const std::vector<PredictionInterval>& intervals,
                          const Vector& point_predictions, const Vector& targets,
                          double tau_upper, double tau_lower);

double ece(const Vector& confidences, const std::vector<bool>& correct, int n_bins = 15);

// P(score_pos > score_neg) with ties counted half.
double auroc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores);

// Rank correlation; average ranks under ties (Pearson on ranks).
double spearman(const Vector& a, const Vector& b);

// Named scalars plus counts; serializes with stable key order.
struct MetricReport {
    std::map<std::string, double> values;
    std::map<std::string, long> counts;
    std::string to_json() const;
};

}  // namespace spcuq
