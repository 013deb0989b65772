// Batch front end: run scenario configs, convergence sweeps, list presets.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kfp/scenario.hpp"

namespace {

enum Exit { kPass = 0, kFail = 1, kConfig = 2 };

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw kfp::ConfigError({path + ": cannot open"});
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void emit(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error(path + ": cannot write");
    out << text;
}

struct Common {
    std::string config;
    std::string output;
    std::string format;
    int threads = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool timing = false;
};

kfp::ScenarioConfig load(const Common& c) {
    kfp::ScenarioConfig cfg = kfp::parse_config(read_file(c.config));
    if (c.seed_set)
        cfg.quad.mc_seed = c.seed;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fractional Kolmogorov-Fokker-Planck operators: identity checks and sweeps"};
    app.require_subcommand(1);

    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", c.config, "scenario file (JSON)")->required();
        sub->add_option("--output,-o", c.output, "output path ('-' for stdout; default from config)");
        sub->add_option("--format,-f", c.format, "csv or json (default from config)")
            ->check(CLI::IsMember({"csv", "json"}));
        sub->add_option("--threads,-j", c.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Monte Carlo seed");
    };

    auto* run = app.add_subcommand("run", "run every check of a scenario");
    add_common(run);
    run->add_flag("--timing", c.timing, "record wall time per row (reports are then not byte-reproducible)");

    std::string axis;
    std::vector<double> values;
    auto* sweep = app.add_subcommand("sweep", "convergence table along one axis");
    add_common(sweep);
    sweep->add_option("--axis", axis, "hermite_order, tau_panels or s")
        ->required()
        ->check(CLI::IsMember({"hermite_order", "tau_panels", "s"}));
    sweep->add_option("--values", values, "strictly increasing axis values")->required()->delimiter(',');

    app.add_subcommand("presets", "list the preset operators");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfig;
    }

    try {
        if (app.got_subcommand("presets")) {
            std::cout << kfp::presets_json().dump(2) << "\n";
            return kPass;
        }
        const kfp::ScenarioConfig cfg = load(c);
        const std::string format = c.format.empty() ? cfg.format : c.format;
        const std::string path = c.output.empty() ? cfg.output_path : c.output;
        if (app.got_subcommand("run")) {
            const auto rows = kfp::run_scenario(cfg, {c.threads, c.timing});
            emit(kfp::render(rows, format), path);
            return kfp::all_pass(rows) ? kPass : kFail;
        }
        kfp::SweepTable table;
        try {
            table = kfp::convergence_sweep(cfg, axis, values);
        } catch (const kfp::InvalidInput& e) {
            std::cerr << "sweep: " << e.what() << "\n";
            return kConfig;
        }
        std::ostringstream os;
        if (format == "json")
            kfp::write_sweep_json(os, table);
        else
            kfp::write_sweep_csv(os, table);
        emit(os.str(), path);
        return kPass;
    } catch (const kfp::ConfigError& e) {
        for (const auto& msg : e.errors())
            std::cerr << "config: " << msg << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFail;
    }
}
