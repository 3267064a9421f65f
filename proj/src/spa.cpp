#include "spcuq/spa.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace spcuq {

ResidualSets partition_residuals(const Vector& residuals) {
    ResidualSets sets;
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        double r = residuals[i];
        if (!std::isfinite(r)) throw InputError("non-finite residual at index " + std::to_string(i));
        if (r > 0.0) {
            sets.all.push_back(static_cast<int>(i));
            sets.upper.push_back(static_cast<int>(i));
        } else if (r < 0.0) {
            sets.all.push_back(static_cast<int>(i));
            sets.lower.push_back(static_cast<int>(i));
        } else {
            ++sets.zero_count;
        }
    }
    return sets;
}

MarTriple empirical_mars(const Vector& residuals) {
    ResidualSets sets = partition_residuals(residuals);
    if (sets.upper.empty()) throw SideUndefinedError(Side::upper, "no positive residuals");
    if (sets.lower.empty()) throw SideUndefinedError(Side::lower, "no negative residuals");
    double up = 0.0, lo = 0.0;
    for (int i : sets.upper) up += residuals[i];
    for (int i : sets.lower) lo += -residuals[i];
    MarTriple m;
    m.upper = up / static_cast<double>(sets.upper.size());
    m.lower = lo / static_cast<double>(sets.lower.size());
    m.total = (up + lo) / static_cast<double>(sets.all.size());
    return m;
}

double harmonic_mean(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw DomainError("harmonic mean needs positive inputs");
    return 2.0 * a * b / (a + b);
}

double self_consistency_discrepancy(double t, const Vector& samples) {
    if (!std::isfinite(t)) throw InputError("split point must be finite");
    MarTriple m = empirical_mars((samples.array() - t).matrix());
    return std::abs(m.total - harmonic_mean(m.upper, m.lower));
}

double sds(const MarTriple& mars) {
    return std::abs(2.0 * mars.upper * mars.lower - mars.total * (mars.upper + mars.lower));
}

double sds_classification(const Vector& softmax_row, const Vector& z_total) {
    if (softmax_row.size() != z_total.size()) {
        throw ShapeError("softmax row and MAR vector disagree on class count");
    }
    double score = 0.0;
    for (Eigen::Index k = 0; k < softmax_row.size(); ++k) {
        double y = softmax_row[k];
        if (!(y >= 0.0) || !(y <= 1.0)) throw DomainError("softmax entries must lie in [0, 1]");
        double up = 1.0 - y;
        double lo = y;
        score += std::abs(2.0 * up * lo - z_total[k] * (up + lo));
    }
    return score;
}

double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) throw InsufficientDataError("quantile of an empty sample");
    if (!(p >= 0.0) || !(p <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    double h = (static_cast<double>(values.size()) - 1.0) * p;
    auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    double frac = h - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

OodThreshold ood_threshold(const std::vector<double>& scores, double alpha) {
    if (scores.size() < 20) {
        throw InsufficientDataError("out-of-distribution threshold needs at least 20 scores, got " +
                                    std::to_string(scores.size()));
    }
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    for (double s : scores) {
        if (!std::isfinite(s)) throw InputError("non-finite score in threshold sample");
    }
    OodThreshold thr;
    thr.alpha = alpha;
    thr.cutoff = quantile_type7(scores, alpha);
    return thr;
}

bool is_ood(const OodThreshold& threshold, double score) { return score > threshold.cutoff; }

}  // namespace spcuq
