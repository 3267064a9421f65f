#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spcuq/mlp.hpp"

namespace spcuq {

enum class NoiseKind { none, gaussian, lognormal, trimodal };

// Defaults follow the cubic benchmark noise settings.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double gauss_sigma = 8.0;
    double log_mu = 1.5;
    double log_sigma = 1.0;
    std::vector<double> mix_weights = {0.4, 0.3, 0.3};
    std::vector<double> mix_means = {0.0, 40.0, -10.0};
    std::vector<double> mix_sigmas = {1.0, 1.0, 1.0};
};

// Analytic mean of the raw law; draws subtract it so noise is mean centered.
double noise_mean(const NoiseSpec& spec);
double sample_noise(const NoiseSpec& spec, std::mt19937_64& rng);

enum class SplitTag { train, val, calib, test };

const char* split_name(SplitTag tag);

struct Dataset {
    Matrix features;  // n x d
    Matrix targets;   // n x 1 regression, n x K one-hot classification
    std::vector<SplitTag> split;
    std::vector<bool> in_distribution;
    std::vector<std::string> feature_names;
    bool classification = false;
    // Populated by standardize(); empty until then.
    Vector feature_mean;
    Vector feature_std;

    int rows() const { return static_cast<int>(features.rows()); }
    int feature_dim() const { return static_cast<int>(features.cols()); }
    int target_dim() const { return static_cast<int>(targets.cols()); }
    std::vector<int> rows_with(SplitTag tag) const;
};

// y = x^3 + centered noise; train x in [-4, 4], test x in [-6, 6] with rows
// outside the training range flagged out-of-distribution.
Dataset generate_cubic(int n_train, int n_test, const NoiseSpec& noise, std::uint64_t seed);

// Gaussian clusters around the given centers (k x d); each label flips to a
// uniformly chosen other class with the given probability.
Dataset generate_blobs(int n, int k_classes, const Matrix& centers, double sigma,
                       double label_flip_rate, std::uint64_t seed);

Dataset load_csv(const std::string& path, const std::string& target_column, bool header = true);

// Z-scores features with train-split statistics, applied to every row.
void standardize(Dataset& ds);

struct SplitFractions {
    double val = 0.1;
    double calib = 0.0;
    double test = 0.0;
};

// Reassigns the requested fractions of current train rows; existing non-train
// rows keep their tags.
void split(Dataset& ds, const SplitFractions& fractions, std::uint64_t seed);

// Snapshot with split and id columns appended, loadable by load_snapshot.
void save_csv(const Dataset& ds, const std::string& path);
Dataset load_snapshot(const std::string& path);

}  // namespace spcuq
