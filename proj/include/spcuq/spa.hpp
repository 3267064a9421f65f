#pragma once

#include <vector>

#include "spcuq/errors.hpp"
#include "spcuq/mlp.hpp"

namespace spcuq {

// Index sets of the sign partition; zero residuals are counted but excluded.
struct ResidualSets {
    std::vector<int> all;    // r != 0
    std::vector<int> upper;  // r > 0
    std::vector<int> lower;  // r < 0
    int zero_count = 0;
};

ResidualSets partition_residuals(const Vector& residuals);

struct MarTriple {
    double total = 0.0;
    double upper = 0.0;
    double lower = 0.0;
};

// Means of |r| over the all/upper/lower sets. An empty side raises
// SideUndefinedError carrying which side.
MarTriple empirical_mars(const Vector& residuals);

// 2ab/(a+b); requires a, b > 0.
double harmonic_mean(double a, double b);

// |MAD - H(MAD+, MAD-)| for the split point t over the sample. Zero at the
// sample mean up to rounding.
double self_consistency_discrepancy(double t, const Vector& samples);

// |2 * upper * lower - total * (upper + lower)|, the division-free form.
double sds(const MarTriple& mars);

// Per-class |2 y(1-y) - z| summed; z is the learned total-MAR vector.
double sds_classification(const Vector& softmax_row, const Vector& z_total);

struct OodThreshold {
    double cutoff = 0.0;
    double alpha = 0.95;
};

// Upper alpha quantile (linear interpolation) of held-out scores; needs at
// least 20 of them.
OodThreshold ood_threshold(const std::vector<double>& scores, double alpha = 0.95);

// Strictly above the cutoff flags out-of-distribution.
bool is_ood(const OodThreshold& threshold, double score);

// Quantile with linear interpolation between order statistics (R type 7).
double quantile_type7(std::vector<double> values, double p);

}  // namespace spcuq
