#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "rtnmpc/acceptance.hpp"
#include "rtnmpc/io.hpp"

namespace fs = std::filesystem;
using rtnmpc::json;

namespace {

// Exit codes, also documented in the README.
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitSolverError = 3;
constexpr int kExitIoError = 4;
constexpr int kExitCriteriaFailed = 5;

struct CommonOptions {
    std::string patient_path;
    std::string scenario_path;
    std::string output_dir = "out";
    std::vector<std::string> overrides;
    unsigned seed = 0;
    bool seed_set = false;
};

struct LoadedRun {
    rtnmpc::PatientConfig patient;
    rtnmpc::Scenario scenario;
    json resolved_scenario;
};

LoadedRun load_run(const CommonOptions& opts) {
    LoadedRun run;
    run.patient = rtnmpc::load_patient(opts.patient_path);
    json doc;
    {
        std::ifstream in(opts.scenario_path);
        if (!in) throw rtnmpc::ConfigError("cannot open file: " + opts.scenario_path);
        in >> doc;
    }
    rtnmpc::apply_overrides(doc, opts.overrides);
    run.scenario = rtnmpc::parse_scenario(doc);
    if (opts.seed_set) run.scenario.seed = opts.seed;
    run.resolved_scenario = rtnmpc::scenario_to_json(run.scenario);
    return run;
}

void write_json(const json& doc, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out << doc.dump(2) << '\n';
}

void write_config_echo(const LoadedRun& run, const CommonOptions& opts, const fs::path& dir) {
    json echo = {
        {"patient_path", fs::absolute(opts.patient_path).string()},
        {"scenario", run.resolved_scenario},
        {"seed", run.scenario.seed},
    };
    write_json(echo, dir / "config_echo.json");
}

int cmd_run(const CommonOptions& opts) {
    const LoadedRun run = load_run(opts);
    const fs::path dir(opts.output_dir);
    fs::create_directories(dir);
    const rtnmpc::PatientModel patient = run.patient.build(run.scenario.ts_min);
    const rtnmpc::SimTrace trace = rtnmpc::run_scenario(patient, run.scenario);
    rtnmpc::write_trace_csv(trace, (dir / "trace.csv").string());
    if (!trace.rows.empty()) {
        const rtnmpc::MetricsReport metrics =
            rtnmpc::compute_metrics(trace, run.scenario, run.patient.pd.e0);
        write_json(rtnmpc::metrics_to_json(metrics), dir / "metrics.json");
    }
    write_config_echo(run, opts, dir);
    std::cout << "wrote " << (dir / "trace.csv").string() << " (" << trace.rows.size()
              << " rows)\n";
    return kExitOk;
}

int cmd_compare_iterations(const CommonOptions& opts, const std::vector<int>& counts) {
    if (counts.empty()) throw rtnmpc::ConfigError("--counts must not be empty");
    if (std::set<int>(counts.begin(), counts.end()).size() != counts.size())
        throw rtnmpc::ConfigError("duplicate iteration counts");
    const LoadedRun base = load_run(opts);
    const fs::path dir(opts.output_dir);
    fs::create_directories(dir);
    const rtnmpc::PatientModel patient = base.patient.build(base.scenario.ts_min);

    std::ofstream combined(dir / "combined.csv");
    if (!combined) throw std::runtime_error("cannot write combined.csv");
    combined << "iterations,time_min,measured_bis,true_bis,u_p,u_r\n";
    json table = json::array();
    for (int count : counts) {
        rtnmpc::Scenario scenario = base.scenario;
        scenario.controller.mode = rtnmpc::FixedIterations{count};
        const rtnmpc::SimTrace trace = rtnmpc::run_scenario(patient, scenario);
        rtnmpc::write_trace_csv(trace,
                                (dir / ("trace_" + std::to_string(count) + ".csv")).string());
        for (const auto& row : trace.rows) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", count,
                          row.time_min, row.measured_bis, row.true_bis, row.applied_input[0],
                          row.applied_input[1]);
            combined << buf;
        }
        const rtnmpc::MetricsReport metrics =
            rtnmpc::compute_metrics(trace, scenario, base.patient.pd.e0);
        json entry = rtnmpc::metrics_to_json(metrics);
        entry["iterations"] = count;
        entry["terminal_bis_error"] =
            std::abs(trace.rows.back().measured_bis - scenario.bis_ref);
        table.push_back(entry);
        std::cout << "iterations=" << count << " terminal |BIS-ref|="
                  << entry["terminal_bis_error"].get<double>() << '\n';
    }
    write_json(table, dir / "metrics_by_count.json");
    write_config_echo(base, opts, dir);
    return kExitOk;
}

int cmd_suite(const CommonOptions& opts) {
    const rtnmpc::PatientConfig patient = rtnmpc::load_patient(opts.patient_path);
    const fs::path dir(opts.output_dir);
    fs::create_directories(dir);
    const auto results = rtnmpc::run_acceptance_suite(patient);
    json report = json::array();
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.id << "  " << r.description << "  ["
                  << r.detail << "]\n";
        report.push_back({{"id", r.id},
                          {"description", r.description},
                          {"pass", r.pass},
                          {"detail", r.detail}});
        all_pass = all_pass && r.pass;
    }
    write_json(report, dir / "acceptance_report.json");
    return all_pass ? kExitOk : kExitCriteriaFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Real-time projected-gradient NMPC for closed-loop anesthesia"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::vector<int> counts;
    auto add_common = [&](CLI::App* cmd, bool needs_scenario) {
        cmd->add_option("--patient", opts.patient_path, "Patient JSON file")->required();
        if (needs_scenario)
            cmd->add_option("--scenario", opts.scenario_path, "Scenario JSON file")->required();
        cmd->add_option("--out", opts.output_dir, "Output directory");
        cmd->add_option("--set", opts.overrides,
                        "Scenario override key=value (repeatable)");
        cmd->add_option("--seed", opts.seed, "Noise seed")->each([&](const std::string&) {
            opts.seed_set = true;
        });
    };

    CLI::App* run = app.add_subcommand("run", "Run one closed-loop scenario");
    add_common(run, true);
    CLI::App* compare =
        app.add_subcommand("compare-iterations", "Run the scenario at several iteration counts");
    add_common(compare, true);
    compare->add_option("--counts", counts, "Iteration counts")->required();
    CLI::App* suite = app.add_subcommand("suite", "Run the full acceptance battery");
    add_common(suite, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(opts);
        if (compare->parsed()) return cmd_compare_iterations(opts, counts);
        return cmd_suite(opts);
    } catch (const rtnmpc::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const rtnmpc::ShapeError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const rtnmpc::StepSizeError& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return kExitSolverError;
    } catch (const rtnmpc::DivergenceError& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return kExitSolverError;
    } catch (const std::exception& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIoError;
    }
}
