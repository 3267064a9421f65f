#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "spcuq/errors.hpp"
#include "spcuq/experiment.hpp"

using namespace spcuq;

namespace {

namespace fs = std::filesystem;

std::string tiny_regression_config(const std::string& out_dir) {
    return R"({
        "schema_version": 1,
        "task": "regression",
        "dataset": {"generator": "cubic", "n_train": 300, "n_test": 150},
        "base_model": {"hidden_sizes": [16, 16], "epochs": 150},
        "uq": {"hidden_sizes": [16], "epochs": 200},
        "trials": 1,
        "seed": 5,
        "output_dir": ")" +
           out_dir + R"("})";
}

std::string tiny_classification_config(const std::string& out_dir) {
    return R"({
        "schema_version": 1,
        "task": "classification",
        "dataset": {"generator": "blobs", "n": 600, "k_classes": 3, "label_flip_rate": 0.1},
        "base_model": {"hidden_sizes": [16], "epochs": 150},
        "uq": {"hidden_sizes": [16], "epochs": 200},
        "trials": 1,
        "seed": 5,
        "output_dir": ")" +
           out_dir + R"("})";
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config parser is strict") {
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
    CHECK_THROWS_AS(parse_config("{}"), ConfigError);  // schema_version required
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 2, "task": "regression"})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1})"), ConfigError);  // task required
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "ranking"})"), ConfigError);

    // Unknown keys anywhere are fatal and named.
    try {
        parse_config(R"({"schema_version": 1, "task": "regression",
                         "dataset": {"generator": "cubic"}, "typo_key": 3})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("typo_key") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "regression",
                                     "dataset": {"generator": "cubic", "bogus": 1}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "regression",
                                     "base_model": {"epochs": "many"}})"),
                    ConfigError);

    // Generator and task must agree.
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "classification",
                                     "dataset": {"generator": "cubic"}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "regression",
                                     "dataset": {"generator": "blobs"}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "regression",
                                     "dataset": {"generator": "wat"}})"),
                    ConfigError);

    // Trials must fit the seeds list when one is given.
    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "regression",
                                     "dataset": {"generator": "cubic"},
                                     "trials": 3, "seeds": [1, 2]})"),
                    ConfigError);
    ExperimentConfig ok = parse_config(R"({"schema_version": 1, "task": "regression",
                                           "dataset": {"generator": "cubic"},
                                           "trials": 2, "seeds": [9, 11]})");
    CHECK(trial_seed(ok, 0) == 9);
    CHECK(trial_seed(ok, 1) == 11);

    ExperimentConfig derived = parse_config(R"({"schema_version": 1, "task": "regression",
                                                "dataset": {"generator": "cubic"},
                                                "trials": 4, "seed": 40})");
    CHECK(trial_seed(derived, 0) == 40);
    CHECK(trial_seed(derived, 3) == 43);

    CHECK_THROWS_AS(parse_config(R"({"schema_version": 1, "task": "regression",
                                     "dataset": {"generator": "cubic"}, "ood_alpha": 1.0})"),
                    ConfigError);
}

TEST_CASE("config echo survives a parse round-trip") {
    ExperimentConfig cfg = parse_config(tiny_regression_config("/tmp/echo"));
    std::string once = config_to_json(cfg);
    std::string twice = config_to_json(parse_config(once));
    CHECK(once == twice);
}

TEST_CASE("fixed seeds give byte-identical reports") {
    fs::path dir = fresh_dir("spcuq_det");
    ExperimentConfig cfg = parse_config(tiny_regression_config(dir.string()));
    UqReport first = run_experiment(cfg);
    REQUIRE(first.all_ok());
    std::string report1 = read_file(dir / "report.json");
    std::string samples1 = read_file(dir / "samples.csv");

    fs::remove_all(dir);
    UqReport second = run_experiment(cfg);
    REQUIRE(second.all_ok());
    CHECK(read_file(dir / "report.json") == report1);
    CHECK(read_file(dir / "samples.csv") == samples1);
    fs::remove_all(dir);
}

TEST_CASE("stage chaining reproduces a single run") {
    fs::path dir = fresh_dir("spcuq_chain");
    ExperimentConfig cfg = parse_config(tiny_regression_config(dir.string()));
    run_experiment(cfg);
    std::string report = read_file(dir / "report.json");
    std::string samples = read_file(dir / "samples.csv");
    std::string weights = read_file(dir / "trial_000" / "uq_weights.bin");
    std::string rendered = read_file(dir / "report.txt");
    std::string plot = read_file(dir / "plot.csv");

    fs::remove_all(dir);
    std::string tdir = trial_dir(cfg, 0);
    stage::generate(cfg, 0, tdir);
    stage::train_base(cfg, 0, tdir);
    stage::train_uq(cfg, 0, tdir);
    TrialResult res = stage::evaluate(cfg, 0, tdir);
    REQUIRE(res.ok);
    finalize_report(cfg, {res});
    render_report(cfg.output_dir);

    CHECK(read_file(dir / "report.json") == report);
    CHECK(read_file(dir / "samples.csv") == samples);
    CHECK(read_file(dir / "trial_000" / "uq_weights.bin") == weights);
    CHECK(read_file(dir / "report.txt") == rendered);
    CHECK(read_file(dir / "plot.csv") == plot);
    fs::remove_all(dir);
}

TEST_CASE("regression report carries the expected metrics") {
    fs::path dir = fresh_dir("spcuq_regmetrics");
    ExperimentConfig cfg = parse_config(tiny_regression_config(dir.string()));
    UqReport report = run_experiment(cfg);
    REQUIRE(report.all_ok());
    const auto& v = report.trials[0].metrics.values;
    for (const char* key : {"rmse", "picp", "piece", "winkler", "picp_cal", "piece_plus",
                            "piece_minus", "spearman", "ood_cutoff", "auroc_ood", "rmse_full"}) {
        CAPTURE(key);
        CHECK(v.count(key) == 1);
    }
    const auto& c = report.trials[0].metrics.counts;
    CHECK(c.at("n_train") + c.at("n_val") + c.at("n_test") == 450);
    CHECK(c.at("n_test_id") + c.at("n_test_ood") == c.at("n_test"));
    CHECK(report.aggregate.values.at("rmse_mean") == doctest::Approx(v.at("rmse")));
    fs::remove_all(dir);
}

TEST_CASE("classification report carries the expected metrics") {
    fs::path dir = fresh_dir("spcuq_clsmetrics");
    ExperimentConfig cfg = parse_config(tiny_classification_config(dir.string()));
    UqReport report = run_experiment(cfg);
    REQUIRE(report.all_ok());
    const auto& v = report.trials[0].metrics.values;
    for (const char* key : {"accuracy", "accuracy_cal", "ece", "ece_cal", "entropy",
                            "entropy_cal", "delta_c", "gate_rate", "auroc_error", "ood_cutoff"}) {
        CAPTURE(key);
        CHECK(v.count(key) == 1);
    }
    CHECK(v.at("accuracy") > 0.55);
    CHECK(v.at("ece") >= 0.0);
    CHECK(v.at("gate_rate") >= 0.0);
    CHECK(v.at("gate_rate") <= 1.0);
    fs::remove_all(dir);
}

TEST_CASE("a failing trial becomes a structured error record") {
    fs::path dir = fresh_dir("spcuq_errrec");
    std::string cfg_json = R"({
        "schema_version": 1,
        "task": "regression",
        "dataset": {"csv_path": "/nonexistent/never.csv", "target_column": "y"},
        "trials": 1,
        "output_dir": ")" + dir.string() + R"("})";
    ExperimentConfig cfg = parse_config(cfg_json);
    UqReport report = run_experiment(cfg);
    CHECK_FALSE(report.all_ok());
    REQUIRE(report.trials.size() == 1);
    CHECK_FALSE(report.trials[0].ok);
    CHECK(report.trials[0].error_kind == "file");
    CHECK_FALSE(report.trials[0].error_message.empty());
    std::string report_json = read_file(dir / "report.json");
    CHECK(report_json.find("\"error\"") != std::string::npos);
    CHECK(report_json.find("never.csv") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("csv datasets run the full pipeline") {
    fs::path dir = fresh_dir("spcuq_csvflow");
    fs::create_directories(dir);
    fs::path csv = dir / "input.csv";
    {
        std::ofstream out(csv);
        out << "x1,x2,y\n";
        std::mt19937_64 rng(12);
        std::uniform_real_distribution<double> dist(-2.0, 2.0);
        for (int i = 0; i < 400; ++i) {
            double a = dist(rng), b = dist(rng);
            out << a << "," << b << "," << (2.0 * a - b + 0.1 * dist(rng)) << "\n";
        }
    }
    std::string cfg_json = R"({
        "schema_version": 1,
        "task": "regression",
        "dataset": {"csv_path": ")" + csv.string() + R"(", "target_column": "y",
                    "standardize": true, "test_fraction": 0.2, "val_fraction": 0.15},
        "base_model": {"hidden_sizes": [16], "epochs": 400,
                       "optimizer": {"learning_rate": 0.01}},
        "uq": {"hidden_sizes": [8], "epochs": 200},
        "trials": 1,
        "output_dir": ")" + dir.string() + R"("})";
    ExperimentConfig cfg = parse_config(cfg_json);
    UqReport report = run_experiment(cfg);
    REQUIRE(report.all_ok());
    const auto& m = report.trials[0].metrics;
    CHECK(m.counts.at("n_test_ood") == 0);
    CHECK(m.values.count("auroc_ood") == 0);  // no ood rows to score
    CHECK(m.values.at("rmse") < 0.5);
    fs::remove_all(dir);
}

TEST_CASE("joint mode trains both nets and evaluates") {
    fs::path dir = fresh_dir("spcuq_joint");
    std::string cfg_json = R"({
        "schema_version": 1,
        "task": "regression",
        "dataset": {"generator": "cubic", "n_train": 300, "n_test": 150},
        "base_model": {"hidden_sizes": [16, 16], "epochs": 400},
        "uq": {"hidden_sizes": [16], "epochs": 200},
        "training_mode": "joint",
        "trials": 1,
        "seed": 3,
        "output_dir": ")" + dir.string() + R"("})";
    ExperimentConfig cfg = parse_config(cfg_json);
    CHECK(cfg.training_mode == TrainingMode::joint);
    UqReport report = run_experiment(cfg);
    if (!report.all_ok()) {
        CAPTURE(report.trials[0].error_message);
        FAIL("joint trial failed");
    }
    CHECK(report.trials[0].metrics.values.at("rmse") < 40.0);
    CHECK(fs::exists(dir / "trial_000" / "uq_weights.bin"));
    fs::remove_all(dir);
}

TEST_CASE("log level env var reaches the cli") {
    const char* bin = std::getenv("SPCUQ_BIN");
    if (!bin) return;  // cli not built in this configuration
    fs::path dir = fresh_dir("spcuq_logcheck");
    fs::create_directories(dir);
    fs::path cfg = dir / "cfg.json";
    {
        std::ofstream out(cfg);
        out << tiny_regression_config((dir / "out").string());
    }
    fs::path err = dir / "stderr.txt";
    std::string cmd = std::string("SPCUQ_LOG=info ") + bin + " run --config " + cfg.string() +
                      " 2> " + err.string();
    REQUIRE(std::system(cmd.c_str()) == 0);
    std::string logged = read_file(err);
    CHECK(logged.find("[spcuq info]") != std::string::npos);

    // Default level hides info lines.
    std::string quiet_cmd = std::string(bin) + " run --config " + cfg.string() + " --output " +
                            (dir / "out2").string() + " 2> " + err.string();
    REQUIRE(std::system(quiet_cmd.c_str()) == 0);
    CHECK(read_file(err).find("[spcuq info]") == std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli subcommands chain to the same bytes and map errors to exit codes") {
    const char* bin = std::getenv("SPCUQ_BIN");
    if (!bin) return;  // cli not built in this configuration
    fs::path dir = fresh_dir("spcuq_clichain");
    fs::create_directories(dir);
    fs::path out = dir / "out";
    fs::path cfg = dir / "cfg.json";
    {
        std::ofstream f(cfg);
        f << tiny_regression_config(out.string());
    }
    run_experiment(parse_config(tiny_regression_config(out.string())));
    std::string report = read_file(out / "report.json");
    std::string samples = read_file(out / "samples.csv");
    fs::remove_all(out);

    for (const char* sub : {"generate", "train-base", "train-uq", "evaluate", "report"}) {
        std::string cmd = std::string(bin) + " " + sub + " --config " + cfg.string() +
                          " 2> /dev/null";
        REQUIRE(std::system(cmd.c_str()) == 0);
    }
    CHECK(read_file(out / "report.json") == report);
    CHECK(read_file(out / "samples.csv") == samples);

    auto exit_code = [&](const std::string& json) {
        fs::path bad = dir / "bad.json";
        std::ofstream(bad) << json;
        std::string cmd = std::string(bin) + " run --config " + bad.string() + " 2> /dev/null";
        int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    // Typed config error: exit 2.
    CHECK(exit_code(R"({"schema_version": 1, "task": "regression", "typo": 1,
                       "output_dir": ")" + (dir / "o2").string() + R"("})") == 2);
    // Trials that fail at runtime finish the report but exit 3.
    CHECK(exit_code(R"({"schema_version": 1, "task": "regression",
                       "dataset": {"generator": "csv", "csv_path": "/nonexistent/never.csv",
                                   "target_column": "y"},
                       "output_dir": ")" + (dir / "o3").string() + R"("})") == 3);
    fs::remove_all(dir);
}

}  // TEST_SUITE
