#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spcuq/errors.hpp"
#include "spcuq/experiment.hpp"
#include "spcuq/log.hpp"

namespace spcuq {

using nlohmann::json;

namespace {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json metrics_json(const MetricReport& m) {
    json j;
    j["values"] = json::object();
    for (const auto& [key, value] : m.values) j["values"][key] = value;
    j["counts"] = json::object();
    for (const auto& [key, value] : m.counts) j["counts"][key] = value;
    return j;
}

}  // namespace

void write_report_files(const ExperimentConfig& config, const UqReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(config.output_dir);

    json root;
    root["schema_version"] = config.schema_version;
    root["config"] = json::parse(config_to_json(config));
    root["all_ok"] = report.all_ok();
    json trials = json::array();
    for (const auto& t : report.trials) {
        json jt;
        jt["index"] = t.index;
        jt["seed"] = t.seed;
        jt["ok"] = t.ok;
        if (t.ok) {
            jt["metrics"] = metrics_json(t.metrics);
        } else {
            jt["error"] = {{"kind", t.error_kind}, {"message", t.error_message}};
        }
        trials.push_back(jt);
    }
    root["trials"] = trials;
    root["aggregate"] = metrics_json(report.aggregate);

    {
        std::ofstream out(config.output_dir + "/report.json");
        if (!out) throw FileError("cannot write " + config.output_dir + "/report.json");
        out << root.dump(2) << "\n";
    }

    // Wide per-trial table; mean and stderr close the file.
    std::set<std::string> keys;
    for (const auto& t : report.trials) {
        if (!t.ok) continue;
        for (const auto& [key, value] : t.metrics.values) keys.insert(key);
    }
    {
        std::ofstream out(config.output_dir + "/metrics.csv");
        if (!out) throw FileError("cannot write " + config.output_dir + "/metrics.csv");
        out << "trial,ok";
        for (const auto& key : keys) out << "," << key;
        out << "\n";
        for (const auto& t : report.trials) {
            out << t.index << "," << (t.ok ? 1 : 0);
            for (const auto& key : keys) {
                out << ",";
                if (!t.ok) continue;
                auto it = t.metrics.values.find(key);
                if (it != t.metrics.values.end()) out << format_value(it->second);
            }
            out << "\n";
        }
        for (const char* row : {"mean", "stderr"}) {
            out << row << ",";
            for (const auto& key : keys) {
                out << ",";
                auto it = report.aggregate.values.find(key + "_" + row);
                if (it != report.aggregate.values.end()) out << format_value(it->second);
            }
            out << "\n";
        }
    }

    // Concatenated per-sample rows with a leading trial column.
    {
        std::ofstream out(config.output_dir + "/samples.csv");
        if (!out) throw FileError("cannot write " + config.output_dir + "/samples.csv");
        std::string header;
        for (const auto& t : report.trials) {
            if (!t.ok) continue;
            std::string path = trial_dir(config, t.index) + "/samples.csv";
            std::ifstream in(path);
            if (!in) throw FileError("cannot open " + path);
            std::string line;
            if (!std::getline(in, line)) throw FormatError(path + " is empty");
            if (header.empty()) {
                header = line;
                out << "trial," << header << "\n";
            } else if (line != header) {
                throw FormatError(path + " header does not match the first trial");
            }
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                out << t.index << "," << line << "\n";
            }
        }
        if (header.empty()) out << "trial\n";
    }
}

void render_report(const std::string& output_dir) {
    json root;
    try {
        root = json::parse(read_text(output_dir + "/report.json"));
    } catch (const json::exception& e) {
        throw FormatError(output_dir + "/report.json is not valid JSON: " + e.what());
    }

    {
        std::ofstream out(output_dir + "/report.txt");
        if (!out) throw FileError("cannot write " + output_dir + "/report.txt");
        const json& cfg = root.at("config");
        std::string generator = cfg.at("dataset").value("generator", std::string("csv"));
        if (generator.empty()) generator = "csv";
        char line[256];
        std::snprintf(line, sizeof(line), "task: %-14s generator: %-10s trials: %d\n",
                      cfg.at("task").get<std::string>().c_str(), generator.c_str(),
                      cfg.at("trials").get<int>());
        out << line;
        out << "\n";

        const json& agg = root.at("aggregate").at("values");
        std::size_t width = 6;
        std::set<std::string> base_keys;
        for (const auto& [key, value] : agg.items()) {
            const std::string suffix = "_mean";
            if (key.size() > suffix.size() &&
                key.compare(key.size() - suffix.size(), suffix.size(), suffix) == 0) {
                std::string base = key.substr(0, key.size() - suffix.size());
                base_keys.insert(base);
                width = std::max(width, base.size());
            }
        }
        std::snprintf(line, sizeof(line), "%-*s %14s %14s\n", static_cast<int>(width), "metric",
                      "mean", "stderr");
        out << line;
        for (const auto& key : base_keys) {
            double mean = agg.at(key + "_mean").get<double>();
            double se = agg.value(key + "_stderr", 0.0);
            std::snprintf(line, sizeof(line), "%-*s %14.6g %14.6g\n", static_cast<int>(width),
                          key.c_str(), mean, se);
            out << line;
        }
        out << "\n";

        std::snprintf(line, sizeof(line), "%-6s %-22s %s\n", "trial", "seed", "status");
        out << line;
        for (const auto& t : root.at("trials")) {
            std::string status = t.at("ok").get<bool>()
                                     ? "ok"
                                     : t.at("error").at("kind").get<std::string>() + ": " +
                                           t.at("error").at("message").get<std::string>();
            std::snprintf(line, sizeof(line), "%-6d %-22llu %s\n", t.at("index").get<int>(),
                          static_cast<unsigned long long>(t.at("seed").get<std::uint64_t>()),
                          status.c_str());
            out << line;
        }

        const json& counts = root.at("aggregate").at("counts");
        if (!counts.empty()) {
            out << "\ncounts:";
            for (const auto& [key, value] : counts.items()) {
                out << " " << key << "=" << value.get<long>();
            }
            out << "\n";
        }
    }

    // Plot extract: x columns, prediction, bounds when present, sds.
    std::ifstream in(output_dir + "/samples.csv");
    if (!in) throw FileError("cannot open " + output_dir + "/samples.csv");
    std::string header_line;
    if (!std::getline(in, header_line)) throw FormatError(output_dir + "/samples.csv is empty");
    std::vector<std::string> header = split_line(header_line);
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    int id_col = col("in_distribution");
    if (id_col < 0) {
        // No successful trial produced samples; leave an empty extract.
        std::ofstream empty(output_dir + "/plot.csv");
        if (!empty) throw FileError("cannot write " + output_dir + "/plot.csv");
        log_warn("no sample rows to extract; wrote an empty " + output_dir + "/plot.csv");
        return;
    }
    bool regression = col("lower") >= 0;
    int end_features = regression ? col("target") : col("label");
    if (end_features < 0) throw FormatError("samples.csv lacks a target column");

    std::vector<int> picked;
    std::vector<std::string> names;
    picked.push_back(col("trial"));
    names.emplace_back("trial");
    for (int c = id_col + 1; c < end_features; ++c) {
        picked.push_back(c);
        names.push_back(header[c]);
    }
    auto add = [&](const std::string& name) {
        int c = col(name);
        if (c >= 0) {
            picked.push_back(c);
            names.push_back(name);
        }
    };
    if (regression) {
        for (const char* name : {"target", "prediction", "lower", "upper", "lower_cal",
                                 "upper_cal", "sds", "ood", "split"}) {
            add(name);
        }
    } else {
        for (const char* name : {"label", "prediction", "confidence", "confidence_cal", "sds",
                                 "ood", "split"}) {
            add(name);
        }
    }

    std::ofstream out(output_dir + "/plot.csv");
    if (!out) throw FileError("cannot write " + output_dir + "/plot.csv");
    for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
    out << "\n";
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size()) {
            throw FormatError(output_dir + "/samples.csv row width does not match its header");
        }
        for (std::size_t i = 0; i < picked.size(); ++i) {
            out << (i ? "," : "") << cells[picked[i]];
        }
        out << "\n";
    }
    log_info("rendered " + output_dir + "/report.txt and plot.csv");
}

}  // namespace spcuq
