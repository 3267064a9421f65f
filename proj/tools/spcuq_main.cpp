#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spcuq/errors.hpp"
#include "spcuq/experiment.hpp"

namespace {

// Exit codes: 0 ok, 2 usage or typed error, 3 some trials failed.
constexpr int kExitError = 2;
constexpr int kExitTrialFailures = 3;

struct CliOptions {
    std::string config_path;
    std::string output_dir;
    int trials = 0;
    long long seed = -1;
    int parallel = 1;
    std::string noise;
};

void add_common(CLI::App* sub, CliOptions& opt, bool config_required) {
    auto* cfg = sub->add_option("--config", opt.config_path, "experiment config JSON")
                    ->check(CLI::ExistingFile);
    if (config_required) cfg->required();
    sub->add_option("--output", opt.output_dir, "override the output directory");
    sub->add_option("--trials", opt.trials, "override the trial count")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", opt.seed, "override the base seed")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--parallel", opt.parallel, "worker threads for run")
        ->check(CLI::PositiveNumber);
}

spcuq::ExperimentConfig resolve_config(const CliOptions& opt) {
    spcuq::ExperimentConfig config = spcuq::load_config_file(opt.config_path);
    if (!opt.output_dir.empty()) config.output_dir = opt.output_dir;
    if (opt.trials > 0) {
        if (!config.seeds.empty() && static_cast<int>(config.seeds.size()) < opt.trials) {
            throw spcuq::ConfigError("--trials exceeds the configured seeds list");
        }
        config.trials = opt.trials;
    }
    if (opt.seed >= 0) {
        config.seed = static_cast<std::uint64_t>(opt.seed);
        config.seeds.clear();
    }
    if (!opt.noise.empty()) {
        spcuq::NoiseSpec spec;
        if (opt.noise == "none") spec.kind = spcuq::NoiseKind::none;
        else if (opt.noise == "gaussian") spec.kind = spcuq::NoiseKind::gaussian;
        else if (opt.noise == "lognormal") spec.kind = spcuq::NoiseKind::lognormal;
        else if (opt.noise == "trimodal") spec.kind = spcuq::NoiseKind::trimodal;
        else throw spcuq::ConfigError("unknown noise kind '" + opt.noise + "'");
        config.dataset.noise = spec;
    }
    return config;
}

template <typename Fn>
void for_each_trial(const spcuq::ExperimentConfig& config, Fn&& fn) {
    for (int i = 0; i < config.trials; ++i) {
        fn(i, spcuq::trial_dir(config, i));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"split-point self-consistency uncertainty toolkit"};
    app.require_subcommand(1);

    CliOptions opt;
    auto* generate = app.add_subcommand("generate", "write per-trial dataset snapshots");
    add_common(generate, opt, true);
    generate->add_option("--noise", opt.noise,
                         "override the noise law (none|gaussian|lognormal|trimodal)");
    auto* train_base = app.add_subcommand("train-base", "train the base predictor per trial");
    add_common(train_base, opt, true);
    auto* train_uq = app.add_subcommand("train-uq", "train the uncertainty heads per trial");
    add_common(train_uq, opt, true);
    auto* evaluate = app.add_subcommand("evaluate", "score trials and write report files");
    add_common(evaluate, opt, true);
    auto* report = app.add_subcommand("report", "render report.json to text and plot CSV");
    add_common(report, opt, false);
    auto* run = app.add_subcommand("run", "all stages end to end");
    add_common(run, opt, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*report && opt.config_path.empty()) {
            if (opt.output_dir.empty()) {
                throw spcuq::ConfigError("report needs --config or --output");
            }
            spcuq::render_report(opt.output_dir);
            return 0;
        }
        spcuq::ExperimentConfig config = resolve_config(opt);
        if (*generate) {
            for_each_trial(config, [&](int i, const std::string& dir) {
                spcuq::stage::generate(config, i, dir);
            });
        } else if (*train_base) {
            for_each_trial(config, [&](int i, const std::string& dir) {
                spcuq::stage::train_base(config, i, dir);
            });
        } else if (*train_uq) {
            for_each_trial(config, [&](int i, const std::string& dir) {
                spcuq::stage::train_uq(config, i, dir);
            });
        } else if (*evaluate) {
            std::vector<spcuq::TrialResult> trials(config.trials);
            for_each_trial(config, [&](int i, const std::string& dir) {
                try {
                    trials[i] = spcuq::stage::evaluate(config, i, dir);
                } catch (const spcuq::Error& e) {
                    trials[i].index = i;
                    trials[i].seed = spcuq::trial_seed(config, i);
                    trials[i].ok = false;
                    trials[i].error_kind = e.kind();
                    trials[i].error_message = e.what();
                    std::cerr << "trial " << i << " error (" << e.kind() << "): " << e.what()
                              << "\n";
                }
            });
            spcuq::UqReport result = spcuq::finalize_report(config, std::move(trials));
            if (!result.all_ok()) return kExitTrialFailures;
        } else if (*report) {
            spcuq::render_report(config.output_dir);
        } else if (*run) {
            spcuq::UqReport result = spcuq::run_experiment(config, opt.parallel);
            if (!result.all_ok()) {
                std::cerr << "some trials failed; see " << config.output_dir << "/report.json\n";
                return kExitTrialFailures;
            }
        }
    } catch (const spcuq::Error& e) {
        std::cerr << "error (" << e.kind() << "): " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return 0;
}
