#include "spcuq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "spcuq/errors.hpp"
#include "spcuq/spa.hpp"

namespace spcuq {

namespace {

void check_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": size mismatch");
    if (a == 0) throw InsufficientDataError(std::string(what) + ": empty input");
}

void check_intervals(const std::vector<PredictionInterval>& intervals) {
    for (const auto& iv : intervals) {
        if (!std::isfinite(iv.lower) || !std::isfinite(iv.upper)) {
            throw InputError("non-finite interval bound");
        }
        if (iv.lower > iv.upper) throw InputError("interval with lower bound above upper bound");
    }
}

// Average ranks, 1-based, ties share the mean of their positions.
std::vector<double> average_ranks(const Vector& v) {
    int n = static_cast<int>(v.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double shared = 0.5 * static_cast<double>(i + j) + 1.0;
        for (int k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

bool has_ties(const Vector& v) {
    std::vector<double> sorted(v.data(), v.data() + v.size());
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

double rmse(const Vector& predictions, const Vector& targets) {
    check_same_size(predictions.size(), targets.size(), "rmse");
    return std::sqrt((predictions - targets).squaredNorm() / static_cast<double>(targets.size()));
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual) {
    check_same_size(static_cast<Eigen::Index>(predicted.size()),
                    static_cast<Eigen::Index>(actual.size()), "accuracy");
    long hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == actual[i];
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double winkler_score(const std::vector<PredictionInterval>& intervals, const Vector& targets,
                     double alpha) {
    check_same_size(static_cast<Eigen::Index>(intervals.size()), targets.size(), "winkler");
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    check_intervals(intervals);
    double total = 0.0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        double width = intervals[i].upper - intervals[i].lower;
        double y = targets[static_cast<Eigen::Index>(i)];
        double s = width;
        if (y < intervals[i].lower) s += 2.0 / alpha * (intervals[i].lower - y);
        if (y > intervals[i].upper) s += 2.0 / alpha * (y - intervals[i].upper);
        total += s;
    }
    return total / static_cast<double>(intervals.size());
}

double picp(const std::vector<PredictionInterval>& intervals, const Vector& targets) {
    check_same_size(static_cast<Eigen::Index>(intervals.size()), targets.size(), "picp");
    check_intervals(intervals);
    long covered = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        double y = targets[static_cast<Eigen::Index>(i)];
        covered += (y >= intervals[i].lower && y <= intervals[i].upper);
    }
    return static_cast<double>(covered) / static_cast<double>(intervals.size());
}

BinnedScore piece(const std::vector<PredictionInterval>& intervals, const Vector& targets,
                  double alpha, int n_bins) {
    check_same_size(static_cast<Eigen::Index>(intervals.size()), targets.size(), "piece");
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    if (n_bins < 1) throw DomainError("bin count must be at least 1");
    check_intervals(intervals);
    int n = static_cast<int>(intervals.size());
    BinnedScore score;
    score.bins_used = n_bins;
    if (n < n_bins) {
        score.bins_used = 1;
        score.fallback = true;
    }
    // Equal-frequency bins by interval width; stable sort keeps tied widths
    // in input order so binning is deterministic.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return (intervals[a].upper - intervals[a].lower) < (intervals[b].upper - intervals[b].lower);
    });
    int bins = score.bins_used;
    int base = n / bins;
    int extra = n % bins;
    double nominal = 1.0 - alpha;
    double total = 0.0;
    int start = 0;
    for (int b = 0; b < bins; ++b) {
        int size = base + (b < extra ? 1 : 0);
        long covered = 0;
        for (int i = start; i < start + size; ++i) {
            int idx = order[i];
            double y = targets[idx];
            covered += (y >= intervals[idx].lower && y <= intervals[idx].upper);
        }
        double cov = static_cast<double>(covered) / static_cast<double>(size);
        total += static_cast<double>(size) / static_cast<double>(n) * std::abs(cov - nominal);
        start += size;
    }
    score.value = total;
    return score;
}

SplitCoverage piece_split(const std::vector<PredictionInterval>& intervals,
                          const Vector& point_predictions, const Vector& targets,
                          double tau_upper, double tau_lower) {
    check_same_size(static_cast<Eigen::Index>(intervals.size()), targets.size(), "piece_split");
    check_same_size(point_predictions.size(), targets.size(), "piece_split");
    if (!(tau_upper > 0.0) || !(tau_upper < 1.0) || !(tau_lower > 0.0) || !(tau_lower < 1.0)) {
        throw DomainError("tau must lie in (0, 1)");
    }
    check_intervals(intervals);
    ResidualSets sets = partition_residuals((targets - point_predictions));
    if (sets.upper.empty()) throw SideUndefinedError(Side::upper, "no positive residuals");
    if (sets.lower.empty()) throw SideUndefinedError(Side::lower, "no negative residuals");
    long cov_up = 0;
    for (int i : sets.upper) {
        double r = targets[i] - point_predictions[i];
        cov_up += (r <= intervals[i].upper - point_predictions[i]);
    }
    long cov_lo = 0;
    for (int i : sets.lower) {
        double r = point_predictions[i] - targets[i];
        cov_lo += (r <= point_predictions[i] - intervals[i].lower);
    }
    SplitCoverage out;
    out.coverage_upper = static_cast<double>(cov_up) / static_cast<double>(sets.upper.size());
    out.coverage_lower = static_cast<double>(cov_lo) / static_cast<double>(sets.lower.size());
    out.piece_upper = std::abs(out.coverage_upper - tau_upper);
    out.piece_lower = std::abs(out.coverage_lower - tau_lower);
    return out;
}

double ece(const Vector& confidences, const std::vector<bool>& correct, int n_bins) {
    check_same_size(confidences.size(), static_cast<Eigen::Index>(correct.size()), "ece");
    if (n_bins < 1) throw DomainError("bin count must be at least 1");
    int n = static_cast<int>(confidences.size());
    std::vector<long> count(n_bins, 0);
    std::vector<double> conf_sum(n_bins, 0.0);
    std::vector<long> hit_sum(n_bins, 0);
    for (int i = 0; i < n; ++i) {
        double c = confidences[i];
        if (!(c >= 0.0) || !(c <= 1.0)) throw DomainError("confidence outside [0, 1]");
        int b = std::min(static_cast<int>(c * n_bins), n_bins - 1);
        ++count[b];
        conf_sum[b] += c;
        hit_sum[b] += correct[i] ? 1 : 0;
    }
    double total = 0.0;
    for (int b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        double acc = static_cast<double>(hit_sum[b]) / static_cast<double>(count[b]);
        double conf = conf_sum[b] / static_cast<double>(count[b]);
        total += static_cast<double>(count[b]) / static_cast<double>(n) * std::abs(acc - conf);
    }
    return total;
}

double auroc(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores) {
    if (positive_scores.empty() || negative_scores.empty()) {
        throw InsufficientDataError("auroc needs scores from both groups");
    }
    for (double s : positive_scores) {
        if (!std::isfinite(s)) throw InputError("non-finite score");
    }
    for (double s : negative_scores) {
        if (!std::isfinite(s)) throw InputError("non-finite score");
    }
    // Midrank Mann-Whitney; ties contribute half a pair each.
    std::size_t np = positive_scores.size(), nn = negative_scores.size();
    std::vector<std::pair<double, bool>> all;
    all.reserve(np + nn);
    for (double s : positive_scores) all.emplace_back(s, true);
    for (double s : negative_scores) all.emplace_back(s, false);
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j + 1 < all.size() && all[j + 1].first == all[i].first) ++j;
        double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (all[k].second) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(np) * static_cast<double>(np + 1);
    return u / (static_cast<double>(np) * static_cast<double>(nn));
}

double spearman(const Vector& a, const Vector& b) {
    check_same_size(a.size(), b.size(), "spearman");
    int n = static_cast<int>(a.size());
    if (n < 2) throw InsufficientDataError("spearman needs at least two pairs");
    std::vector<double> ra = average_ranks(a);
    std::vector<double> rb = average_ranks(b);
    if (!has_ties(a) && !has_ties(b)) {
        double d2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = ra[i] - rb[i];
            d2 += d * d;
        }
        double nn = static_cast<double>(n);
        return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
    }
    double mean_a = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    double mean_b = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (int i = 0; i < n; ++i) {
        double da = ra[i] - mean_a;
        double db = rb[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) throw DomainError("spearman undefined for a constant input");
    return cov / std::sqrt(var_a * var_b);
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["values"] = nlohmann::json::object();
    for (const auto& [k, v] : values) j["values"][k] = v;
    j["counts"] = nlohmann::json::object();
    for (const auto& [k, v] : counts) j["counts"][k] = v;
    return j.dump(2);
}

}  // namespace spcuq
