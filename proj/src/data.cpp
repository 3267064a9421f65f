#include "spcuq/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spcuq/errors.hpp"
#include "spcuq/log.hpp"

namespace spcuq {

namespace {

void validate_noise(const NoiseSpec& spec) {
    switch (spec.kind) {
        case NoiseKind::none:
            return;
        case NoiseKind::gaussian:
            if (!(spec.gauss_sigma > 0.0)) throw ConfigError("gaussian noise sigma must be positive");
            return;
        case NoiseKind::lognormal:
            if (!(spec.log_sigma > 0.0)) throw ConfigError("lognormal noise sigma must be positive");
            return;
        case NoiseKind::trimodal: {
            std::size_t k = spec.mix_weights.size();
            if (k == 0 || spec.mix_means.size() != k || spec.mix_sigmas.size() != k) {
                throw ConfigError("mixture weights, means and sigmas must share a length");
            }
            double sum = std::accumulate(spec.mix_weights.begin(), spec.mix_weights.end(), 0.0);
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
            for (double w : spec.mix_weights) {
                if (!(w > 0.0)) throw ConfigError("mixture weights must be positive");
            }
            for (double s : spec.mix_sigmas) {
                if (!(s > 0.0)) throw ConfigError("mixture sigmas must be positive");
            }
            return;
        }
    }
    throw ConfigError("unknown noise kind");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& s, int row) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw InputError("non-numeric value '" + s + "' at data row " + std::to_string(row));
    }
    return v;
}

}  // namespace

const char* split_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::train: return "train";
        case SplitTag::val: return "val";
        case SplitTag::calib: return "calib";
        case SplitTag::test: return "test";
    }
    return "train";
}

std::vector<int> Dataset::rows_with(SplitTag tag) const {
    std::vector<int> idx;
    for (int i = 0; i < rows(); ++i) {
        if (split[i] == tag) idx.push_back(i);
    }
    return idx;
}

double noise_mean(const NoiseSpec& spec) {
    validate_noise(spec);
    switch (spec.kind) {
        case NoiseKind::none:
        case NoiseKind::gaussian:
            return 0.0;
        case NoiseKind::lognormal:
            return std::exp(spec.log_mu + 0.5 * spec.log_sigma * spec.log_sigma);
        case NoiseKind::trimodal: {
            double m = 0.0;
            for (std::size_t i = 0; i < spec.mix_weights.size(); ++i) {
                m += spec.mix_weights[i] * spec.mix_means[i];
            }
            return m;
        }
    }
    return 0.0;
}

double sample_noise(const NoiseSpec& spec, std::mt19937_64& rng) {
    validate_noise(spec);
    switch (spec.kind) {
        case NoiseKind::none:
            return 0.0;
        case NoiseKind::gaussian: {
            std::normal_distribution<double> dist(0.0, spec.gauss_sigma);
            return dist(rng);
        }
        case NoiseKind::lognormal: {
            std::lognormal_distribution<double> dist(spec.log_mu, spec.log_sigma);
            return dist(rng) - noise_mean(spec);
        }
        case NoiseKind::trimodal: {
            std::discrete_distribution<int> pick(spec.mix_weights.begin(), spec.mix_weights.end());
            int c = pick(rng);
            std::normal_distribution<double> dist(spec.mix_means[c], spec.mix_sigmas[c]);
            return dist(rng) - noise_mean(spec);
        }
    }
    return 0.0;
}

Dataset generate_cubic(int n_train, int n_test, const NoiseSpec& noise, std::uint64_t seed) {
    if (n_train <= 0) throw ConfigError("n_train must be positive");
    if (n_test < 0) throw ConfigError("n_test must be non-negative");
    validate_noise(noise);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> train_x(-4.0, 4.0);
    std::uniform_real_distribution<double> test_x(-6.0, 6.0);
    int n = n_train + n_test;
    Dataset ds;
    ds.features = Matrix(n, 1);
    ds.targets = Matrix(n, 1);
    ds.split.resize(n);
    ds.in_distribution.assign(n, true);
    ds.feature_names = {"x"};
    for (int i = 0; i < n; ++i) {
        bool is_train = i < n_train;
        double x = is_train ? train_x(rng) : test_x(rng);
        ds.features(i, 0) = x;
        ds.targets(i, 0) = x * x * x + sample_noise(noise, rng);
        ds.split[i] = is_train ? SplitTag::train : SplitTag::test;
        ds.in_distribution[i] = std::abs(x) <= 4.0;
    }
    return ds;
}

Dataset generate_blobs(int n, int k_classes, const Matrix& centers, double sigma,
                       double label_flip_rate, std::uint64_t seed) {
    if (n <= 0) throw ConfigError("n must be positive");
    if (k_classes < 2) throw ConfigError("need at least two classes");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (label_flip_rate < 0.0 || label_flip_rate >= 1.0) {
        throw ConfigError("label flip rate must lie in [0, 1)");
    }
    Matrix c = centers;
    if (c.size() == 0) {
        // Default: evenly spaced on a circle, wide enough to separate at sigma 1.
        c = Matrix(k_classes, 2);
        for (int k = 0; k < k_classes; ++k) {
            double ang = 2.0 * M_PI * k / k_classes;
            c(k, 0) = 4.0 * std::cos(ang);
            c(k, 1) = 4.0 * std::sin(ang);
        }
    }
    if (c.rows() != k_classes) throw ConfigError("centers must provide one row per class");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_class(0, k_classes - 1);
    std::uniform_int_distribution<int> pick_other(0, k_classes - 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, sigma);
    Dataset ds;
    ds.classification = true;
    int d = static_cast<int>(c.cols());
    ds.features = Matrix(n, d);
    ds.targets = Matrix::Zero(n, k_classes);
    ds.split.assign(n, SplitTag::train);
    ds.in_distribution.assign(n, true);
    for (int j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    for (int i = 0; i < n; ++i) {
        int cluster = pick_class(rng);
        for (int j = 0; j < d; ++j) ds.features(i, j) = c(cluster, j) + jitter(rng);
        int label = cluster;
        if (label_flip_rate > 0.0 && unit(rng) < label_flip_rate) {
            int other = pick_other(rng);
            label = other >= cluster ? other + 1 : other;
        }
        ds.targets(i, label) = 1.0;
    }
    return ds;
}

Dataset load_csv(const std::string& path, const std::string& target_column, bool header) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> names;
    int target_idx = -1;
    int row_no = 0;
    std::size_t width = 0;
    if (header) {
        if (!std::getline(in, line)) throw InputError("csv has no header row");
        names = split_line(line);
        width = names.size();
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == target_column) target_idx = static_cast<int>(i);
        }
        if (target_idx < 0) throw InputError("target column '" + target_column + "' not found");
    } else {
        // Without a header the target column is given by index.
        try {
            target_idx = std::stoi(target_column);
        } catch (const std::exception&) {
            throw InputError("headerless csv needs a numeric target column index");
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row_no;
        auto fields = split_line(line);
        if (width == 0) {
            width = fields.size();
            if (target_idx < 0 || target_idx >= static_cast<int>(width)) {
                throw InputError("target column index out of range");
            }
            if (names.empty()) {
                for (std::size_t i = 0; i < width; ++i) names.push_back("c" + std::to_string(i));
            }
        }
        if (fields.size() != width) {
            throw InputError("ragged csv row " + std::to_string(row_no) + ": expected " +
                             std::to_string(width) + " fields, got " + std::to_string(fields.size()));
        }
        std::vector<double> vals;
        vals.reserve(width);
        for (const auto& f : fields) vals.push_back(parse_double(f, row_no));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw InsufficientDataError("csv holds no data rows");
    int n = static_cast<int>(rows.size());
    int d = static_cast<int>(width) - 1;
    if (d < 1) throw InputError("csv needs at least one feature column");
    Dataset ds;
    ds.features = Matrix(n, d);
    ds.targets = Matrix(n, 1);
    ds.split.assign(n, SplitTag::train);
    ds.in_distribution.assign(n, true);
    for (std::size_t i = 0; i < width; ++i) {
        if (static_cast<int>(i) != target_idx) ds.feature_names.push_back(names[i]);
    }
    for (int i = 0; i < n; ++i) {
        int col = 0;
        for (std::size_t j = 0; j < width; ++j) {
            if (static_cast<int>(j) == target_idx) {
                ds.targets(i, 0) = rows[i][j];
            } else {
                ds.features(i, col++) = rows[i][j];
            }
        }
    }
    return ds;
}

void standardize(Dataset& ds) {
    if (ds.feature_mean.size() != 0) throw ConfigError("dataset already standardized");
    std::vector<int> train_rows = ds.rows_with(SplitTag::train);
    if (train_rows.empty()) throw InsufficientDataError("standardize needs train rows");
    int d = ds.feature_dim();
    ds.feature_mean = Vector::Zero(d);
    ds.feature_std = Vector::Ones(d);
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int i : train_rows) mean += ds.features(i, j);
        mean /= static_cast<double>(train_rows.size());
        double var = 0.0;
        for (int i : train_rows) {
            double dlt = ds.features(i, j) - mean;
            var += dlt * dlt;
        }
        double sd = std::sqrt(var / static_cast<double>(train_rows.size()));
        if (sd < 1e-12) {
            log_warn("feature " + std::to_string(j) + " is constant on train rows; left unscaled");
            sd = 1.0;
        }
        ds.feature_mean[j] = mean;
        ds.feature_std[j] = sd;
    }
    for (int i = 0; i < ds.rows(); ++i) {
        for (int j = 0; j < d; ++j) {
            ds.features(i, j) = (ds.features(i, j) - ds.feature_mean[j]) / ds.feature_std[j];
        }
    }
}

void split(Dataset& ds, const SplitFractions& fractions, std::uint64_t seed) {
    if (fractions.val < 0.0 || fractions.calib < 0.0 || fractions.test < 0.0) {
        throw ConfigError("split fractions must be non-negative");
    }
    if (fractions.val + fractions.calib + fractions.test >= 1.0) {
        throw ConfigError("split fractions must leave train rows behind");
    }
    std::vector<int> train_rows = ds.rows_with(SplitTag::train);
    int n = static_cast<int>(train_rows.size());
    if (n == 0) throw InsufficientDataError("no train rows to split");
    std::mt19937_64 rng(seed);
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    int n_val = static_cast<int>(std::lround(fractions.val * n));
    int n_calib = static_cast<int>(std::lround(fractions.calib * n));
    int n_test = static_cast<int>(std::lround(fractions.test * n));
    if (n_val + n_calib + n_test >= n) throw ConfigError("split leaves no train rows");
    int at = 0;
    for (int i = 0; i < n_val; ++i) ds.split[train_rows[at++]] = SplitTag::val;
    for (int i = 0; i < n_calib; ++i) ds.split[train_rows[at++]] = SplitTag::calib;
    for (int i = 0; i < n_test; ++i) ds.split[train_rows[at++]] = SplitTag::test;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot open " + path + " for writing");
    for (int j = 0; j < ds.feature_dim(); ++j) out << ds.feature_names[j] << ",";
    if (ds.target_dim() == 1) {
        out << "target";
    } else {
        for (int k = 0; k < ds.target_dim(); ++k) {
            out << "target_" << k << (k + 1 < ds.target_dim() ? "," : "");
        }
    }
    out << ",split,in_distribution\n";
    for (int i = 0; i < ds.rows(); ++i) {
        for (int j = 0; j < ds.feature_dim(); ++j) out << format_double(ds.features(i, j)) << ",";
        for (int k = 0; k < ds.target_dim(); ++k) out << format_double(ds.targets(i, k)) << ",";
        out << split_name(ds.split[i]) << "," << (ds.in_distribution[i] ? 1 : 0) << "\n";
    }
    if (!out) throw FileError("failed writing " + path);
}

Dataset load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError("snapshot has no header");
    auto names = split_line(line);
    if (names.size() < 3) throw InputError("snapshot header too short");
    if (names[names.size() - 2] != "split" || names.back() != "in_distribution") {
        throw InputError("snapshot header must end with split,in_distribution");
    }
    int target_start = -1;
    int target_dim = 0;
    for (std::size_t i = 0; i + 2 < names.size(); ++i) {
        if (names[i] == "target" || names[i].rfind("target_", 0) == 0) {
            if (target_start < 0) target_start = static_cast<int>(i);
            ++target_dim;
        }
    }
    if (target_start < 0) throw InputError("snapshot lacks target columns");
    if (target_start + target_dim + 2 != static_cast<int>(names.size())) {
        throw InputError("snapshot target columns must sit between features and split");
    }
    std::vector<std::vector<std::string>> raw;
    int row_no = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row_no;
        auto fields = split_line(line);
        if (fields.size() != names.size()) {
            throw InputError("ragged snapshot row " + std::to_string(row_no));
        }
        raw.push_back(std::move(fields));
    }
    if (raw.empty()) throw InsufficientDataError("snapshot holds no rows");
    int n = static_cast<int>(raw.size());
    int d = target_start;
    Dataset ds;
    ds.classification = target_dim > 1;
    ds.features = Matrix(n, d);
    ds.targets = Matrix(n, target_dim);
    ds.split.resize(n);
    ds.in_distribution.resize(n);
    for (int j = 0; j < d; ++j) ds.feature_names.push_back(names[j]);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) ds.features(i, j) = parse_double(raw[i][j], i + 2);
        for (int k = 0; k < target_dim; ++k) {
            ds.targets(i, k) = parse_double(raw[i][target_start + k], i + 2);
        }
        const std::string& tag = raw[i][names.size() - 2];
        if (tag == "train") ds.split[i] = SplitTag::train;
        else if (tag == "val") ds.split[i] = SplitTag::val;
        else if (tag == "calib") ds.split[i] = SplitTag::calib;
        else if (tag == "test") ds.split[i] = SplitTag::test;
        else throw InputError("unknown split tag '" + tag + "'");
        ds.in_distribution[i] = raw[i].back() == "1";
    }
    return ds;
}

}  // namespace spcuq
