#include "spcuq/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "spcuq/errors.hpp"
#include "spcuq/log.hpp"
#include "spcuq/spa.hpp"
#include "spcuq/weights_io.hpp"

namespace spcuq {

using nlohmann::json;

namespace {

// Trial-scoped rng streams derive from the trial seed at fixed offsets.
constexpr std::uint64_t kSeedSplit = 101;
constexpr std::uint64_t kSeedBaseInit = 202;
constexpr std::uint64_t kSeedBaseBatch = 303;
constexpr std::uint64_t kSeedUq = 404;
constexpr std::uint64_t kSeedCalib = 505;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_field(const json& obj, const char* key, const T& fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("key '") + key + "' has the wrong type");
    }
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "'");
}

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

OptimizerConfig parse_optimizer(const json& obj) {
    check_keys(obj, {"kind", "learning_rate", "beta1", "beta2", "epsilon"}, "optimizer");
    OptimizerConfig cfg;
    std::string kind = get_field<std::string>(obj, "kind", "adam");
    if (kind == "adam") cfg.kind = OptimizerKind::adam;
    else if (kind == "sgd") cfg.kind = OptimizerKind::sgd;
    else throw ConfigError("unknown optimizer kind '" + kind + "'");
    cfg.learning_rate = get_field<double>(obj, "learning_rate", cfg.learning_rate);
    cfg.beta1 = get_field<double>(obj, "beta1", cfg.beta1);
    cfg.beta2 = get_field<double>(obj, "beta2", cfg.beta2);
    cfg.epsilon = get_field<double>(obj, "epsilon", cfg.epsilon);
    return cfg;
}

json optimizer_to_json(const OptimizerConfig& cfg) {
    json j;
    j["kind"] = cfg.kind == OptimizerKind::adam ? "adam" : "sgd";
    j["learning_rate"] = cfg.learning_rate;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["epsilon"] = cfg.epsilon;
    return j;
}

NoiseSpec parse_noise(const json& obj) {
    check_keys(obj, {"kind", "sigma", "mu", "weights", "means", "sigmas"}, "dataset.noise");
    NoiseSpec spec;
    std::string kind = get_field<std::string>(obj, "kind", "gaussian");
    if (kind == "none") spec.kind = NoiseKind::none;
    else if (kind == "gaussian") spec.kind = NoiseKind::gaussian;
    else if (kind == "lognormal") spec.kind = NoiseKind::lognormal;
    else if (kind == "trimodal") spec.kind = NoiseKind::trimodal;
    else throw ConfigError("unknown noise kind '" + kind + "'");
    if (spec.kind == NoiseKind::gaussian) {
        spec.gauss_sigma = get_field<double>(obj, "sigma", spec.gauss_sigma);
    } else if (spec.kind == NoiseKind::lognormal) {
        spec.log_mu = get_field<double>(obj, "mu", spec.log_mu);
        spec.log_sigma = get_field<double>(obj, "sigma", spec.log_sigma);
    } else if (spec.kind == NoiseKind::trimodal) {
        spec.mix_weights = get_field<std::vector<double>>(obj, "weights", spec.mix_weights);
        spec.mix_means = get_field<std::vector<double>>(obj, "means", spec.mix_means);
        spec.mix_sigmas = get_field<std::vector<double>>(obj, "sigmas", spec.mix_sigmas);
    }
    return spec;
}

json noise_to_json(const NoiseSpec& spec) {
    json j;
    switch (spec.kind) {
        case NoiseKind::none:
            j["kind"] = "none";
            break;
        case NoiseKind::gaussian:
            j["kind"] = "gaussian";
            j["sigma"] = spec.gauss_sigma;
            break;
        case NoiseKind::lognormal:
            j["kind"] = "lognormal";
            j["mu"] = spec.log_mu;
            j["sigma"] = spec.log_sigma;
            break;
        case NoiseKind::trimodal:
            j["kind"] = "trimodal";
            j["weights"] = spec.mix_weights;
            j["means"] = spec.mix_means;
            j["sigmas"] = spec.mix_sigmas;
            break;
    }
    return j;
}

DatasetConfig parse_dataset(const json& obj, const std::string& task) {
    check_keys(obj,
               {"generator", "noise", "n_train", "n_test", "n", "k_classes", "centers", "sigma",
                "label_flip_rate", "csv_path", "target_column", "header", "standardize",
                "test_fraction", "val_fraction", "calib_fraction"},
               "dataset");
    DatasetConfig cfg;
    cfg.generator = get_field<std::string>(obj, "generator", "");
    if (obj.contains("noise")) cfg.noise = parse_noise(obj.at("noise"));
    cfg.n_train = get_field<int>(obj, "n_train", cfg.n_train);
    cfg.n_test = get_field<int>(obj, "n_test", cfg.n_test);
    cfg.n = get_field<int>(obj, "n", cfg.n);
    cfg.k_classes = get_field<int>(obj, "k_classes", cfg.k_classes);
    if (obj.contains("centers")) {
        auto rows = get_field<std::vector<std::vector<double>>>(obj, "centers", {});
        if (!rows.empty()) {
            cfg.centers = Matrix(rows.size(), rows[0].size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].size() != rows[0].size()) throw ConfigError("ragged centers array");
                for (std::size_t j = 0; j < rows[i].size(); ++j) cfg.centers(i, j) = rows[i][j];
            }
        }
    }
    cfg.sigma = get_field<double>(obj, "sigma", cfg.sigma);
    cfg.label_flip_rate = get_field<double>(obj, "label_flip_rate", cfg.label_flip_rate);
    cfg.csv_path = get_field<std::string>(obj, "csv_path", "");
    cfg.target_column = get_field<std::string>(obj, "target_column", "");
    cfg.header = get_field<bool>(obj, "header", true);
    cfg.standardize_features = get_field<bool>(obj, "standardize", false);
    cfg.test_fraction = get_field<double>(obj, "test_fraction", cfg.test_fraction);
    cfg.val_fraction = get_field<double>(obj, "val_fraction", cfg.val_fraction);
    // The held-out calibration split feeds the classification head only.
    cfg.calib_fraction =
        get_field<double>(obj, "calib_fraction", task == "classification" ? 0.1 : 0.0);
    return cfg;
}

json dataset_to_json(const DatasetConfig& cfg) {
    json j;
    j["generator"] = cfg.generator;
    j["noise"] = noise_to_json(cfg.noise);
    j["n_train"] = cfg.n_train;
    j["n_test"] = cfg.n_test;
    j["n"] = cfg.n;
    j["k_classes"] = cfg.k_classes;
    if (cfg.centers.size() > 0) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < cfg.centers.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index c = 0; c < cfg.centers.cols(); ++c) row.push_back(cfg.centers(i, c));
            rows.push_back(row);
        }
        j["centers"] = rows;
    }
    j["sigma"] = cfg.sigma;
    j["label_flip_rate"] = cfg.label_flip_rate;
    if (!cfg.csv_path.empty()) {
        j["csv_path"] = cfg.csv_path;
        j["target_column"] = cfg.target_column;
        j["header"] = cfg.header;
    }
    j["standardize"] = cfg.standardize_features;
    j["test_fraction"] = cfg.test_fraction;
    j["val_fraction"] = cfg.val_fraction;
    j["calib_fraction"] = cfg.calib_fraction;
    return j;
}

BaseModelConfig parse_base_model(const json& obj) {
    check_keys(obj, {"hidden_sizes", "activation", "epochs", "batch_size", "optimizer", "temperature"},
               "base_model");
    BaseModelConfig cfg;
    cfg.hidden_sizes = get_field<std::vector<int>>(obj, "hidden_sizes", cfg.hidden_sizes);
    cfg.activation = parse_activation(get_field<std::string>(obj, "activation", "relu"));
    cfg.train.epochs = get_field<int>(obj, "epochs", 1000);
    cfg.train.batch_size = get_field<int>(obj, "batch_size", 0);
    if (obj.contains("optimizer")) cfg.train.optimizer = parse_optimizer(obj.at("optimizer"));
    cfg.temperature = get_field<double>(obj, "temperature", 1.0);
    if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
    return cfg;
}

json base_model_to_json(const BaseModelConfig& cfg) {
    json j;
    j["hidden_sizes"] = cfg.hidden_sizes;
    j["activation"] = activation_name(cfg.activation);
    j["epochs"] = cfg.train.epochs;
    j["batch_size"] = cfg.train.batch_size;
    j["optimizer"] = optimizer_to_json(cfg.train.optimizer);
    j["temperature"] = cfg.temperature;
    return j;
}

void parse_uq(const json& obj, ExperimentConfig& cfg) {
    check_keys(obj,
               {"tau_upper", "tau_lower", "hidden_sizes", "activation", "epochs", "batch_size",
                "optimizer", "coverage_mode", "delta_0"},
               "uq");
    RegUqConfig& r = cfg.reg_uq;
    r.tau_upper = get_field<double>(obj, "tau_upper", r.tau_upper);
    r.tau_lower = get_field<double>(obj, "tau_lower", r.tau_lower);
    r.hidden_sizes = get_field<std::vector<int>>(obj, "hidden_sizes", r.hidden_sizes);
    r.activation = parse_activation(get_field<std::string>(obj, "activation", "relu"));
    r.epochs = get_field<int>(obj, "epochs", r.epochs);
    r.batch_size = get_field<int>(obj, "batch_size", r.batch_size);
    if (obj.contains("optimizer")) r.optimizer = parse_optimizer(obj.at("optimizer"));
    if (obj.contains("coverage_mode")) {
        std::string mode = get_field<std::string>(obj, "coverage_mode", "");
        if (mode == "per_batch") r.coverage_mode = CoverageMode::per_batch;
        else if (mode == "full_set") r.coverage_mode = CoverageMode::full_set;
        else throw ConfigError("unknown coverage mode '" + mode + "'");
    }
    ClsUqConfig& c = cfg.cls_uq;
    c.hidden_sizes = r.hidden_sizes;
    c.activation = r.activation;
    c.epochs = r.epochs;
    c.batch_size = r.batch_size;
    c.optimizer = r.optimizer;
    c.delta_0 = get_field<double>(obj, "delta_0", c.delta_0);
}

json uq_to_json(const ExperimentConfig& cfg) {
    json j;
    j["tau_upper"] = cfg.reg_uq.tau_upper;
    j["tau_lower"] = cfg.reg_uq.tau_lower;
    j["hidden_sizes"] = cfg.reg_uq.hidden_sizes;
    j["activation"] = activation_name(cfg.reg_uq.activation);
    j["epochs"] = cfg.reg_uq.epochs;
    j["batch_size"] = cfg.reg_uq.batch_size;
    j["optimizer"] = optimizer_to_json(cfg.reg_uq.optimizer);
    if (cfg.reg_uq.coverage_mode) {
        j["coverage_mode"] =
            *cfg.reg_uq.coverage_mode == CoverageMode::per_batch ? "per_batch" : "full_set";
    }
    j["delta_0"] = cfg.cls_uq.delta_0;
    return j;
}

std::string dataset_path(const std::string& dir) { return dir + "/dataset.csv"; }
std::string base_path(const std::string& dir) { return dir + "/base_weights.bin"; }
std::string uq_path(const std::string& dir) { return dir + "/uq_weights.bin"; }
std::string calib_path(const std::string& dir) { return dir + "/calib_weights.bin"; }

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config json: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config must be a json object");
    check_keys(root,
               {"schema_version", "task", "dataset", "base_model", "uq", "ood_alpha",
                "winkler_alpha", "trials", "seed", "seeds", "output_dir", "training_mode"},
               "config");
    ExperimentConfig cfg;
    if (!root.contains("schema_version")) throw ConfigError("config needs a schema_version");
    cfg.schema_version = get_field<int>(root, "schema_version", 0);
    if (cfg.schema_version != 1) {
        throw ConfigError("unsupported schema_version " + std::to_string(cfg.schema_version));
    }
    cfg.task = get_field<std::string>(root, "task", "");
    if (cfg.task != "regression" && cfg.task != "classification") {
        throw ConfigError("task must be 'regression' or 'classification'");
    }
    if (root.contains("dataset")) cfg.dataset = parse_dataset(root.at("dataset"), cfg.task);
    else cfg.dataset.calib_fraction = cfg.task == "classification" ? 0.1 : 0.0;
    if (root.contains("base_model")) cfg.base_model = parse_base_model(root.at("base_model"));
    if (root.contains("uq")) parse_uq(root.at("uq"), cfg);
    cfg.ood_alpha = get_field<double>(root, "ood_alpha", cfg.ood_alpha);
    cfg.winkler_alpha = get_field<double>(root, "winkler_alpha", cfg.winkler_alpha);
    if (!(cfg.ood_alpha > 0.0) || !(cfg.ood_alpha < 1.0)) {
        throw ConfigError("ood_alpha must lie in (0, 1)");
    }
    if (!(cfg.winkler_alpha > 0.0) || !(cfg.winkler_alpha < 1.0)) {
        throw ConfigError("winkler_alpha must lie in (0, 1)");
    }
    cfg.trials = get_field<int>(root, "trials", 1);
    if (cfg.trials < 1) throw ConfigError("trials must be at least 1");
    cfg.seed = get_field<std::uint64_t>(root, "seed", 0);
    cfg.seeds = get_field<std::vector<std::uint64_t>>(root, "seeds", {});
    if (!cfg.seeds.empty() && static_cast<int>(cfg.seeds.size()) < cfg.trials) {
        throw ConfigError("seeds list shorter than the trial count");
    }
    cfg.output_dir = get_field<std::string>(root, "output_dir", cfg.output_dir);
    std::string mode = get_field<std::string>(root, "training_mode", "posthoc");
    if (mode == "posthoc") cfg.training_mode = TrainingMode::posthoc;
    else if (mode == "joint") cfg.training_mode = TrainingMode::joint;
    else throw ConfigError("training_mode must be 'posthoc' or 'joint'");

    const std::string& gen = cfg.dataset.generator;
    if (gen.empty() && cfg.dataset.csv_path.empty()) {
        throw ConfigError("dataset needs a generator or a csv_path");
    }
    if (gen == "cubic" && cfg.task != "regression") {
        throw ConfigError("the cubic generator is a regression benchmark");
    }
    if (gen == "blobs" && cfg.task != "classification") {
        throw ConfigError("the blobs generator is a classification benchmark");
    }
    if (!gen.empty() && gen != "cubic" && gen != "blobs") {
        throw ConfigError("unknown generator '" + gen + "'");
    }
    if (!cfg.dataset.csv_path.empty() && cfg.task != "regression") {
        throw ConfigError("csv datasets are regression inputs");
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["task"] = cfg.task;
    j["dataset"] = dataset_to_json(cfg.dataset);
    j["base_model"] = base_model_to_json(cfg.base_model);
    j["uq"] = uq_to_json(cfg);
    j["ood_alpha"] = cfg.ood_alpha;
    j["winkler_alpha"] = cfg.winkler_alpha;
    j["trials"] = cfg.trials;
    j["seed"] = cfg.seed;
    if (!cfg.seeds.empty()) j["seeds"] = cfg.seeds;
    j["output_dir"] = cfg.output_dir;
    j["training_mode"] = cfg.training_mode == TrainingMode::posthoc ? "posthoc" : "joint";
    return j.dump(2);
}

std::uint64_t trial_seed(const ExperimentConfig& config, int trial_index) {
    if (trial_index < 0 || trial_index >= config.trials) {
        throw ConfigError("trial index out of range");
    }
    if (!config.seeds.empty()) return config.seeds[trial_index];
    return config.seed + static_cast<std::uint64_t>(trial_index);
}

std::string trial_dir(const ExperimentConfig& config, int trial_index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trial_%03d", trial_index);
    return config.output_dir + "/" + buf;
}

bool UqReport::all_ok() const {
    for (const auto& t : trials) {
        if (!t.ok) return false;
    }
    return !trials.empty();
}

namespace {

Mlp load_base_model(const ExperimentConfig& config, const std::string& dir) {
    OutputActivation out = config.task == "classification" ? OutputActivation::softmax
                                                           : OutputActivation::identity;
    Mlp net = load_weights(base_path(dir), config.base_model.activation, out);
    // Dividing the logits by T is the same as scaling the last layer.
    if (config.task == "classification" && config.base_model.temperature != 1.0) {
        net.weights.back() /= config.base_model.temperature;
        net.biases.back() /= config.base_model.temperature;
    }
    return net;
}

Matrix select_rows(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
    return out;
}

// One epoch of the five-head gradient on the current residual partition.
// Rows with zero residuals contribute nothing; a side empty this epoch is
// skipped rather than fatal because the partition moves while training.
Matrix reg_uq_head_grad(const Matrix& pred, const Vector& abs_res, const std::vector<int>& up_rows,
                        const std::vector<int>& lo_rows, const std::vector<int>& all_rows,
                        double tau_upper, double tau_lower) {
    Matrix grad = Matrix::Zero(pred.rows(), 5);
    auto apply_qr = [&](const std::vector<int>& rows, int head, double tau) {
        if (rows.empty()) return;
        Vector p(rows.size()), t(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            p[i] = pred(rows[i], head);
            t[i] = abs_res[rows[i]];
        }
        QrLossResult r = qr_loss(p, t, tau);
        for (std::size_t i = 0; i < rows.size(); ++i) grad(rows[i], head) += r.grad[i];
    };
    apply_qr(up_rows, 0, tau_upper);
    apply_qr(lo_rows, 1, tau_lower);
    if (!all_rows.empty()) {
        double inv = 1.0 / static_cast<double>(all_rows.size());
        for (int i : all_rows) grad(i, 2) += 2.0 * (pred(i, 2) - abs_res[i]) * inv;
    }
    auto apply_mse = [&](const std::vector<int>& rows, int head) {
        if (rows.empty()) return;
        double inv = 1.0 / static_cast<double>(rows.size());
        for (int i : rows) grad(i, head) += 2.0 * (pred(i, head) - abs_res[i]) * inv;
    };
    apply_mse(up_rows, 3);
    apply_mse(lo_rows, 4);
    return grad;
}

// Joint mode: the UQ heads ride on the live trunk features and their loss
// flows back into the base. Full-batch by design.
void joint_train(const ExperimentConfig& config, const Dataset& ds, const std::string& dir,
                 std::uint64_t ts) {
    std::vector<int> train_rows = ds.rows_with(SplitTag::train);
    Matrix x = select_rows(ds.features, train_rows);
    Matrix y = select_rows(ds.targets, train_rows);
    int n = static_cast<int>(train_rows.size());
    int k = static_cast<int>(y.cols());
    bool cls = config.task == "classification";

    MlpSpec base_spec;
    base_spec.layer_sizes.push_back(static_cast<int>(x.cols()));
    for (int h : config.base_model.hidden_sizes) base_spec.layer_sizes.push_back(h);
    base_spec.layer_sizes.push_back(k);
    base_spec.activation = config.base_model.activation;
    base_spec.output_activation = cls ? OutputActivation::softmax : OutputActivation::identity;
    base_spec.seed = ts + kSeedBaseInit;
    Mlp base = mlp_init(base_spec);

    MlpSpec uq_spec;
    uq_spec.layer_sizes.push_back(base.feature_dim());
    const auto& uq_hidden = cls ? config.cls_uq.hidden_sizes : config.reg_uq.hidden_sizes;
    for (int h : uq_hidden) uq_spec.layer_sizes.push_back(h);
    uq_spec.layer_sizes.push_back(cls ? k : 5);
    uq_spec.activation = cls ? config.cls_uq.activation : config.reg_uq.activation;
    uq_spec.output_activation = OutputActivation::softplus;
    uq_spec.seed = ts + kSeedUq;
    Mlp uq = mlp_init(uq_spec);

    OptimizerState opt_base = make_optimizer(base, config.base_model.train.optimizer);
    OptimizerState opt_uq =
        make_optimizer(uq, cls ? config.cls_uq.optimizer : config.reg_uq.optimizer);

    for (int epoch = 0; epoch < config.base_model.train.epochs; ++epoch) {
        ForwardCache base_cache;
        Matrix pred = forward_cached(base, x, base_cache);
        const Matrix& features = base_cache.act[base.layer_count() - 1];
        ForwardCache uq_cache;
        Matrix uq_pred = forward_cached(uq, features, uq_cache);

        Matrix uq_grad;
        if (cls) {
            Matrix abs_res = (y - pred).cwiseAbs();
            uq_grad = 2.0 * (uq_pred - abs_res) / static_cast<double>(n * k);
        } else {
            Vector residuals = y.col(0) - pred.col(0);
            std::vector<int> up, lo, all;
            for (int i = 0; i < n; ++i) {
                if (residuals[i] > 0.0) { up.push_back(i); all.push_back(i); }
                else if (residuals[i] < 0.0) { lo.push_back(i); all.push_back(i); }
            }
            uq_grad = reg_uq_head_grad(uq_pred, residuals.cwiseAbs(), up, lo, all,
                                       config.reg_uq.tau_upper, config.reg_uq.tau_lower);
        }
        Matrix feature_grad;
        Gradients uq_grads = backward_cached(uq, uq_cache, uq_grad, nullptr, &feature_grad);
        Matrix task_grad = 2.0 * (pred - y) / static_cast<double>(n * k);
        Gradients base_grads = backward_cached(base, base_cache, task_grad, &feature_grad, nullptr);
        optimizer_step(base, base_grads, opt_base);
        optimizer_step(uq, uq_grads, opt_uq);
    }
    save_weights(base, base_path(dir));
    save_weights(uq, uq_path(dir));
}

}  // namespace

namespace stage {

void generate(const ExperimentConfig& config, int trial_index, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::uint64_t ts = trial_seed(config, trial_index);
    const DatasetConfig& dc = config.dataset;
    Dataset ds;
    SplitFractions fr;
    fr.val = dc.val_fraction;
    fr.calib = dc.calib_fraction;
    if (dc.generator == "cubic") {
        ds = generate_cubic(dc.n_train, dc.n_test, dc.noise, ts);
    } else if (dc.generator == "blobs") {
        ds = generate_blobs(dc.n, dc.k_classes, dc.centers, dc.sigma, dc.label_flip_rate, ts);
        fr.test = dc.test_fraction;
    } else {
        ds = load_csv(dc.csv_path, dc.target_column, dc.header);
        fr.test = dc.test_fraction;
    }
    if (dc.standardize_features) {
        // Standardizing before the carve keeps stats from train rows only if
        // the carve happens first; do the carve first.
        split(ds, fr, ts + kSeedSplit);
        standardize(ds);
    } else {
        split(ds, fr, ts + kSeedSplit);
    }
    save_csv(ds, dataset_path(dir));
    log_info(dir + ": dataset written, " + std::to_string(ds.rows()) + " rows");
}

void train_base(const ExperimentConfig& config, int trial_index, const std::string& dir) {
    std::uint64_t ts = trial_seed(config, trial_index);
    Dataset ds = load_snapshot(dataset_path(dir));
    if (config.training_mode == TrainingMode::joint) {
        joint_train(config, ds, dir, ts);
        log_info(dir + ": joint base+uq training done");
        return;
    }
    std::vector<int> train_rows = ds.rows_with(SplitTag::train);
    if (train_rows.empty()) throw InsufficientDataError("no train rows");
    Matrix x = select_rows(ds.features, train_rows);
    Matrix y = select_rows(ds.targets, train_rows);
    MlpSpec spec;
    spec.layer_sizes.push_back(ds.feature_dim());
    for (int h : config.base_model.hidden_sizes) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(ds.target_dim());
    spec.activation = config.base_model.activation;
    spec.output_activation = config.task == "classification" ? OutputActivation::softmax
                                                             : OutputActivation::identity;
    spec.seed = ts + kSeedBaseInit;
    Mlp net = mlp_init(spec);
    TrainConfig tc = config.base_model.train;
    tc.seed = ts + kSeedBaseBatch;
    double loss = train_mse(net, x, y, tc);
    save_weights(net, base_path(dir));
    log_info(dir + ": base trained, final mse " + std::to_string(loss));
}

void train_uq(const ExperimentConfig& config, int trial_index, const std::string& dir) {
    std::uint64_t ts = trial_seed(config, trial_index);
    Dataset ds = load_snapshot(dataset_path(dir));
    Mlp base = load_base_model(config, dir);
    bool cls = config.task == "classification";

    if (config.training_mode == TrainingMode::joint) {
        if (!std::filesystem::exists(uq_path(dir))) {
            throw FileError("joint mode expects " + uq_path(dir) + " from the train-base stage");
        }
    } else {
        std::vector<int> train_rows = ds.rows_with(SplitTag::train);
        if (train_rows.empty()) throw InsufficientDataError("no train rows");
        Matrix x = select_rows(ds.features, train_rows);
        Matrix y = select_rows(ds.targets, train_rows);
        ForwardResult fr = forward_with_features(base, x);
        if (!cls) {
            Vector residuals = y.col(0) - fr.output.col(0);
            RegTrainingSets sets = build_reg_training_sets(fr.features, residuals);
            RegUqConfig rc = config.reg_uq;
            rc.seed = ts + kSeedUq;
            Mlp uq = train_reg_uq(sets, rc);
            save_weights(uq, uq_path(dir));
        } else {
            ClsTargets targets = build_cls_targets(fr.output, y);
            ClsUqConfig cc = config.cls_uq;
            cc.seed = ts + kSeedUq;
            Mlp mar = train_total_mar_head(fr.features, targets.abs_residuals, cc);
            save_weights(mar, uq_path(dir));
        }
    }
    if (cls) {
        std::vector<int> calib_rows = ds.rows_with(SplitTag::calib);
        if (calib_rows.empty()) {
            throw InsufficientDataError("classification needs a calibration split");
        }
        Matrix xc = select_rows(ds.features, calib_rows);
        Matrix yc = select_rows(ds.targets, calib_rows);
        ForwardResult frc = forward_with_features(base, xc);
        ClsTargets targets = build_cls_targets(frc.output, yc);
        ClsUqConfig cc = config.cls_uq;
        cc.seed = ts + kSeedCalib;
        Mlp calib = train_calibration_head(frc.features, targets, cc);
        save_weights(calib, calib_path(dir));
    }
    log_info(dir + ": uq heads trained");
}

namespace {

struct Subset {
    std::vector<int> rows;
    Vector preds;
    Vector targets;
    std::vector<PredictionInterval> raw;
    std::vector<PredictionInterval> cal;
};

Subset gather(const std::vector<int>& rows, const Vector& preds, const Matrix& targets,
              const std::vector<PredictionInterval>& raw, const std::vector<PredictionInterval>& cal) {
    Subset s;
    s.rows = rows;
    s.preds = Vector(rows.size());
    s.targets = Vector(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.preds[i] = preds[rows[i]];
        s.targets[i] = targets(rows[i], 0);
        s.raw.push_back(raw[rows[i]]);
        s.cal.push_back(cal[rows[i]]);
    }
    return s;
}

void add_interval_metrics(MetricReport& m, const Subset& s, const ExperimentConfig& config,
                          const std::string& suffix) {
    m.values["rmse" + suffix] = rmse(s.preds, s.targets);
    m.values["winkler" + suffix] = winkler_score(s.raw, s.targets, config.winkler_alpha);
    m.values["picp" + suffix] = picp(s.raw, s.targets);
    BinnedScore p = piece(s.raw, s.targets, config.winkler_alpha);
    m.values["piece" + suffix] = p.value;
    if (p.fallback) m.counts["piece_fallback" + suffix] = 1;
    m.values["winkler_cal" + suffix] = winkler_score(s.cal, s.targets, config.winkler_alpha);
    m.values["picp_cal" + suffix] = picp(s.cal, s.targets);
    m.values["piece_cal" + suffix] = piece(s.cal, s.targets, config.winkler_alpha).value;
    try {
        SplitCoverage sc = piece_split(s.raw, s.preds, s.targets, config.reg_uq.tau_upper,
                                       config.reg_uq.tau_lower);
        m.values["piece_plus" + suffix] = sc.piece_upper;
        m.values["piece_minus" + suffix] = sc.piece_lower;
        m.values["coverage_plus" + suffix] = sc.coverage_upper;
        m.values["coverage_minus" + suffix] = sc.coverage_lower;
        SplitCoverage scc = piece_split(s.cal, s.preds, s.targets, config.reg_uq.tau_upper,
                                        config.reg_uq.tau_lower);
        m.values["piece_plus_cal" + suffix] = scc.piece_upper;
        m.values["piece_minus_cal" + suffix] = scc.piece_lower;
        m.values["coverage_plus_cal" + suffix] = scc.coverage_upper;
        m.values["coverage_minus_cal" + suffix] = scc.coverage_lower;
    } catch (const SideUndefinedError& e) {
        // A one-sided test subset cannot report split coverage.
        m.counts["split_coverage_undefined" + suffix] = 1;
        log_warn(std::string("split coverage skipped: ") + e.what());
    }
}

TrialResult evaluate_regression(const ExperimentConfig& config, int trial_index,
                                const std::string& dir, const Dataset& ds, const Mlp& base) {
    TrialResult result;
    result.index = trial_index;
    result.seed = trial_seed(config, trial_index);
    Mlp uq = load_weights(uq_path(dir), config.reg_uq.activation, OutputActivation::softplus);

    ForwardResult fr = forward_with_features(base, ds.features);
    Vector preds = fr.output.col(0);
    Matrix heads = predict_reg_uq_batch(uq, fr.features);
    int n = ds.rows();
    Vector sds_scores(n);
    std::vector<PredictionInterval> raw(n), cal(n);
    std::vector<double> factors_up(n), factors_lo(n);
    for (int i = 0; i < n; ++i) {
        RegUqOutput o;
        o.q_upper = heads(i, 0);
        o.q_lower = heads(i, 1);
        o.z = heads(i, 2);
        o.z_upper = heads(i, 3);
        o.z_lower = heads(i, 4);
        sds_scores[i] = sds_regression(o);
        raw[i] = spi(preds[i], o);
        CalibrationFactors f = calibration_factors(o);
        factors_up[i] = f.upper;
        factors_lo[i] = f.lower;
        cal[i] = calibrated_spi(preds[i], o, f);
    }

    std::vector<double> val_scores;
    for (int i : ds.rows_with(SplitTag::val)) val_scores.push_back(sds_scores[i]);
    OodThreshold thr = ood_threshold(val_scores, config.ood_alpha);

    std::vector<int> test_rows = ds.rows_with(SplitTag::test);
    std::vector<int> test_id, test_ood;
    for (int i : test_rows) (ds.in_distribution[i] ? test_id : test_ood).push_back(i);
    if (test_id.empty()) throw InsufficientDataError("no in-distribution test rows");

    MetricReport& m = result.metrics;
    add_interval_metrics(m, gather(test_id, preds, ds.targets, raw, cal), config, "");
    if (!test_ood.empty()) {
        add_interval_metrics(m, gather(test_rows, preds, ds.targets, raw, cal), config, "_full");
    }

    Vector abs_err(test_id.size()), sds_id(test_id.size());
    for (std::size_t i = 0; i < test_id.size(); ++i) {
        abs_err[i] = std::abs(ds.targets(test_id[i], 0) - preds[test_id[i]]);
        sds_id[i] = sds_scores[test_id[i]];
    }
    m.values["spearman"] = spearman(sds_id, abs_err);
    m.values["ood_cutoff"] = thr.cutoff;
    double flagged_id = 0.0;
    for (int i : test_id) flagged_id += is_ood(thr, sds_scores[i]);
    m.values["ood_rate_id"] = flagged_id / static_cast<double>(test_id.size());
    if (!test_ood.empty()) {
        std::vector<double> pos, neg;
        for (int i : test_ood) pos.push_back(sds_scores[i]);
        for (int i : test_id) neg.push_back(sds_scores[i]);
        m.values["auroc_ood"] = auroc(pos, neg);
        double flagged = 0.0;
        for (int i : test_ood) flagged += is_ood(thr, sds_scores[i]);
        m.values["ood_rate_ood"] = flagged / static_cast<double>(test_ood.size());
    }

    // Zero residuals on the training rows are dropped from the UQ sets.
    {
        std::vector<int> train_rows = ds.rows_with(SplitTag::train);
        Vector r(train_rows.size());
        for (std::size_t i = 0; i < train_rows.size(); ++i) {
            r[i] = ds.targets(train_rows[i], 0) - preds[train_rows[i]];
        }
        m.counts["zero_residuals"] = partition_residuals(r).zero_count;
        m.counts["n_train"] = static_cast<long>(train_rows.size());
    }
    m.counts["n_val"] = static_cast<long>(val_scores.size());
    m.counts["n_calib"] = static_cast<long>(ds.rows_with(SplitTag::calib).size());
    m.counts["n_test"] = static_cast<long>(test_rows.size());
    m.counts["n_test_id"] = static_cast<long>(test_id.size());
    m.counts["n_test_ood"] = static_cast<long>(test_ood.size());

    std::ofstream out(dir + "/samples.csv");
    if (!out) throw FileError("cannot write " + dir + "/samples.csv");
    out << "index,split,in_distribution";
    for (const auto& name : ds.feature_names) out << "," << name;
    out << ",target,prediction,lower,upper,lower_cal,upper_cal,scale_upper,scale_lower,"
           "z,z_upper,z_lower,sds,ood\n";
    for (int i = 0; i < n; ++i) {
        out << i << "," << split_name(ds.split[i]) << "," << (ds.in_distribution[i] ? 1 : 0);
        for (int j = 0; j < ds.feature_dim(); ++j) out << "," << format_double(ds.features(i, j));
        out << "," << format_double(ds.targets(i, 0)) << "," << format_double(preds[i]) << ","
            << format_double(raw[i].lower) << "," << format_double(raw[i].upper) << ","
            << format_double(cal[i].lower) << "," << format_double(cal[i].upper) << ","
            << format_double(factors_up[i]) << "," << format_double(factors_lo[i]) << ","
            << format_double(heads(i, 2)) << "," << format_double(heads(i, 3)) << ","
            << format_double(heads(i, 4)) << "," << format_double(sds_scores[i]) << ","
            << (is_ood(thr, sds_scores[i]) ? 1 : 0) << "\n";
    }
    result.ok = true;
    return result;
}

TrialResult evaluate_classification(const ExperimentConfig& config, int trial_index,
                                    const std::string& dir, const Dataset& ds, const Mlp& base) {
    TrialResult result;
    result.index = trial_index;
    result.seed = trial_seed(config, trial_index);
    Mlp mar = load_weights(uq_path(dir), config.cls_uq.activation, OutputActivation::softplus);
    Mlp calib = load_weights(calib_path(dir), config.cls_uq.activation, OutputActivation::softplus);

    ForwardResult fr = forward_with_features(base, ds.features);
    const Matrix& softmax = fr.output;
    Matrix z = forward(mar, fr.features);
    Matrix c3 = forward(calib, fr.features);
    int n = ds.rows();
    int k = ds.target_dim();
    if (z.cols() != k || c3.cols() != 3 * k) {
        throw ShapeError("uq head widths do not match the class count");
    }

    Vector sds_scores(n);
    Matrix cal_raw(n, k), cal_norm(n, k);
    Vector delta_c(n);
    std::vector<bool> corrected(n);
    for (int i = 0; i < n; ++i) {
        sds_scores[i] = sds_classification(softmax.row(i).transpose(), z.row(i).transpose());
        ClsCalibrationOutput o;
        o.z_total = c3.row(i).segment(0, k).transpose();
        o.z_upper = c3.row(i).segment(k, k).transpose();
        o.z_lower = c3.row(i).segment(2 * k, k).transpose();
        CalibrationGate gate = calibration_quality(o, config.cls_uq.delta_0);
        CalibratedPrediction cp = calibrate_prediction(softmax.row(i).transpose(), o, gate);
        cal_raw.row(i) = cp.raw.transpose();
        cal_norm.row(i) = cp.normalized.transpose();
        delta_c[i] = gate.delta_c;
        corrected[i] = cp.corrected;
    }

    std::vector<double> val_scores;
    for (int i : ds.rows_with(SplitTag::val)) val_scores.push_back(sds_scores[i]);
    OodThreshold thr = ood_threshold(val_scores, config.ood_alpha);

    std::vector<int> test_rows = ds.rows_with(SplitTag::test);
    if (test_rows.empty()) throw InsufficientDataError("no test rows");

    auto argmax_row = [](const Matrix& mat, int row) {
        int best = 0;
        for (int c = 1; c < mat.cols(); ++c) {
            if (mat(row, c) > mat(row, best)) best = c;
        }
        return best;
    };

    int nt = static_cast<int>(test_rows.size());
    std::vector<int> truth(nt), pred(nt), pred_cal(nt);
    Vector conf(nt), conf_cal(nt);
    std::vector<bool> correct(nt), correct_cal(nt);
    double entropy_sum = 0.0, entropy_cal_sum = 0.0, delta_sum = 0.0;
    long corrected_count = 0;
    std::vector<double> sds_wrong, sds_right;
    for (int t = 0; t < nt; ++t) {
        int i = test_rows[t];
        truth[t] = argmax_row(ds.targets, i);
        pred[t] = argmax_row(softmax, i);
        pred_cal[t] = argmax_row(cal_raw, i);
        conf[t] = softmax(i, pred[t]);
        conf_cal[t] = cal_raw(i, pred_cal[t]);
        correct[t] = pred[t] == truth[t];
        correct_cal[t] = pred_cal[t] == truth[t];
        entropy_sum += predictive_entropy(softmax.row(i).transpose());
        entropy_cal_sum += predictive_entropy(cal_norm.row(i).transpose());
        delta_sum += delta_c[i];
        corrected_count += corrected[i] ? 1 : 0;
        (correct[t] ? sds_right : sds_wrong).push_back(sds_scores[i]);
    }

    MetricReport& m = result.metrics;
    m.values["accuracy"] = accuracy(pred, truth);
    m.values["accuracy_cal"] = accuracy(pred_cal, truth);
    m.values["ece"] = ece(conf, correct);
    m.values["ece_cal"] = ece(conf_cal, correct_cal);
    m.values["entropy"] = entropy_sum / nt;
    m.values["entropy_cal"] = entropy_cal_sum / nt;
    m.values["delta_c"] = delta_sum / nt;
    m.values["gate_rate"] = static_cast<double>(corrected_count) / nt;
    m.values["ood_cutoff"] = thr.cutoff;
    double flagged = 0.0;
    for (int i : test_rows) flagged += is_ood(thr, sds_scores[i]);
    m.values["ood_rate_id"] = flagged / static_cast<double>(nt);
    if (!sds_wrong.empty() && !sds_right.empty()) {
        m.values["auroc_error"] = auroc(sds_wrong, sds_right);
    }
    m.counts["n_train"] = static_cast<long>(ds.rows_with(SplitTag::train).size());
    m.counts["n_val"] = static_cast<long>(val_scores.size());
    m.counts["n_calib"] = static_cast<long>(ds.rows_with(SplitTag::calib).size());
    m.counts["n_test"] = nt;
    m.counts["k_classes"] = k;

    std::ofstream out(dir + "/samples.csv");
    if (!out) throw FileError("cannot write " + dir + "/samples.csv");
    out << "index,split,in_distribution";
    for (const auto& name : ds.feature_names) out << "," << name;
    out << ",label,prediction,confidence,prediction_cal,confidence_cal,entropy,entropy_cal,"
           "delta_c,corrected,sds,ood\n";
    for (int i = 0; i < n; ++i) {
        int p = argmax_row(softmax, i);
        int pc = argmax_row(cal_raw, i);
        out << i << "," << split_name(ds.split[i]) << "," << (ds.in_distribution[i] ? 1 : 0);
        for (int j = 0; j < ds.feature_dim(); ++j) out << "," << format_double(ds.features(i, j));
        out << "," << argmax_row(ds.targets, i) << "," << p << "," << format_double(softmax(i, p))
            << "," << pc << "," << format_double(cal_raw(i, pc)) << ","
            << format_double(predictive_entropy(softmax.row(i).transpose())) << ","
            << format_double(predictive_entropy(cal_norm.row(i).transpose())) << ","
            << format_double(delta_c[i]) << "," << (corrected[i] ? 1 : 0) << ","
            << format_double(sds_scores[i]) << "," << (is_ood(thr, sds_scores[i]) ? 1 : 0) << "\n";
    }
    result.ok = true;
    return result;
}

}  // namespace

TrialResult evaluate(const ExperimentConfig& config, int trial_index, const std::string& dir) {
    Dataset ds = load_snapshot(dataset_path(dir));
    Mlp base = load_base_model(config, dir);
    if (config.task == "classification") {
        return evaluate_classification(config, trial_index, dir, ds, base);
    }
    return evaluate_regression(config, trial_index, dir, ds, base);
}

}  // namespace stage

UqReport run_experiment(const ExperimentConfig& config, int parallel_workers) {
    std::filesystem::create_directories(config.output_dir);
    UqReport report;
    report.trials.assign(config.trials, TrialResult{});

    auto run_trial = [&](int i) {
        TrialResult res;
        res.index = i;
        try {
            res.seed = trial_seed(config, i);
            std::string dir = trial_dir(config, i);
            stage::generate(config, i, dir);
            stage::train_base(config, i, dir);
            stage::train_uq(config, i, dir);
            res = stage::evaluate(config, i, dir);
        } catch (const Error& e) {
            res.ok = false;
            res.error_kind = e.kind();
            res.error_message = e.what();
            log_error("trial " + std::to_string(i) + " failed (" + e.kind() + "): " + e.what());
        } catch (const std::exception& e) {
            res.ok = false;
            res.error_kind = "internal";
            res.error_message = e.what();
            log_error("trial " + std::to_string(i) + " failed: " + std::string(e.what()));
        }
        report.trials[i] = res;
    };

    int workers = std::max(1, std::min(parallel_workers, config.trials));
    if (workers == 1) {
        for (int i = 0; i < config.trials; ++i) run_trial(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (int i = next.fetch_add(1); i < config.trials; i = next.fetch_add(1)) {
                    run_trial(i);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    report = finalize_report(config, std::move(report.trials));
    render_report(config.output_dir);
    return report;
}

UqReport finalize_report(const ExperimentConfig& config, std::vector<TrialResult> trials) {
    UqReport report;
    report.trials = std::move(trials);

    // Mean and standard error over trials that finished; a key must appear in
    // every successful trial to aggregate.
    std::vector<const TrialResult*> ok;
    for (const auto& t : report.trials) {
        if (t.ok) ok.push_back(&t);
    }
    if (!ok.empty()) {
        for (const auto& [key, first_value] : ok.front()->metrics.values) {
            std::vector<double> xs;
            bool everywhere = true;
            for (const TrialResult* t : ok) {
                auto it = t->metrics.values.find(key);
                if (it == t->metrics.values.end()) {
                    everywhere = false;
                    break;
                }
                xs.push_back(it->second);
            }
            if (!everywhere) continue;
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double se = 0.0;
            if (xs.size() > 1) {
                double var = 0.0;
                for (double x : xs) var += (x - mean) * (x - mean);
                var /= static_cast<double>(xs.size() - 1);
                se = std::sqrt(var / static_cast<double>(xs.size()));
            }
            report.aggregate.values[key + "_mean"] = mean;
            report.aggregate.values[key + "_stderr"] = se;
        }
        report.aggregate.counts = ok.front()->metrics.counts;
    }
    report.aggregate.counts["n_trials"] = static_cast<long>(report.trials.size());
    report.aggregate.counts["n_failed"] =
        static_cast<long>(report.trials.size() - ok.size());

    write_report_files(config, report);
    return report;
}

}  // namespace spcuq
