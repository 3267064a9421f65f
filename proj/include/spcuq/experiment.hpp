#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spcuq/cls_uq.hpp"
#include "spcuq/data.hpp"
#include "spcuq/metrics.hpp"
#include "spcuq/reg_uq.hpp"
#include "spcuq/train.hpp"

namespace spcuq {

struct DatasetConfig {
    std::string generator;  // "cubic", "blobs", or empty for csv input
    // cubic
    NoiseSpec noise;
    int n_train = 2000;
    int n_test = 1000;
    // blobs
    int n = 3000;
    int k_classes = 3;
    Matrix centers;  // defaults chosen by the generator when empty
    double sigma = 1.0;
    double label_flip_rate = 0.0;
    // csv
    std::string csv_path;
    std::string target_column;
    bool header = true;
    bool standardize_features = false;
    double test_fraction = 0.1;  // csv rows only; generators bring their own test split
    // carved from the train rows
    double val_fraction = 0.1;
    double calib_fraction = 0.1;
};

struct BaseModelConfig {
    std::vector<int> hidden_sizes = {64, 64};
    Activation activation = Activation::relu;
    TrainConfig train;
    // Softmax logits divided by this at prediction time; below 1 sharpens.
    double temperature = 1.0;
};

enum class TrainingMode { posthoc, joint };

struct ExperimentConfig {
    int schema_version = 1;
    std::string task;  // "regression" | "classification"
    DatasetConfig dataset;
    BaseModelConfig base_model;
    RegUqConfig reg_uq;
    ClsUqConfig cls_uq;
    double ood_alpha = 0.95;
    double winkler_alpha = 0.05;
    int trials = 1;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;  // optional explicit per-trial seeds
    std::string output_dir = "out";
    TrainingMode training_mode = TrainingMode::posthoc;
};

// Strict parse: unknown keys, bad types, or a schema version mismatch throw
// ConfigError naming the offending key.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

std::uint64_t trial_seed(const ExperimentConfig& config, int trial_index);

struct TrialResult {
    int index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error_kind;
    std::string error_message;
    MetricReport metrics;
};

struct UqReport {
    std::vector<TrialResult> trials;
    MetricReport aggregate;  // mean and standard error over successful trials
    bool all_ok() const;
};

// Stages share the trial directory contract; chaining them one by one is
// byte-identical to run_experiment.
namespace stage {
void generate(const ExperimentConfig& config, int trial_index, const std::string& trial_dir);
void train_base(const ExperimentConfig& config, int trial_index, const std::string& trial_dir);
void train_uq(const ExperimentConfig& config, int trial_index, const std::string& trial_dir);
TrialResult evaluate(const ExperimentConfig& config, int trial_index, const std::string& trial_dir);
}  // namespace stage

UqReport run_experiment(const ExperimentConfig& config, int parallel_workers = 1);

// Aggregates finished trials and writes the report files; run_experiment and
// the standalone evaluate stage share this reduce.
UqReport finalize_report(const ExperimentConfig& config, std::vector<TrialResult> trials);

std::string trial_dir(const ExperimentConfig& config, int trial_index);

// report.json + metrics.csv + concatenated samples.csv under output_dir.
void write_report_files(const ExperimentConfig& config, const UqReport& report);

// Renders output_dir/report.json into an aligned text table (report.txt) and
// a plot-ready samples extract (plot.csv).
void render_report(const std::string& output_dir);

}  // namespace spcuq
