#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pdet/config.hpp"
#include "pdet/harness.hpp"
#include "pdet/selfcheck.hpp"

namespace {

void print_metrics_table(const std::vector<pdet::TaskMetrics>& metrics) {
    std::printf("%-6s %10s %10s %10s %12s %12s %12s\n", "task", "map_p", "map_c",
                "map_a", "pseudo_easy", "pseudo_hard", "pseudo_rej");
    for (const auto& m : metrics) {
        if (m.map_p)
            std::printf("%-6d %10.4f %10.4f %10.4f %12llu %12llu %12llu\n",
                        m.task + 1, *m.map_p, m.map_c, m.map_a,
                        static_cast<unsigned long long>(m.pseudo_easy),
                        static_cast<unsigned long long>(m.pseudo_hard),
                        static_cast<unsigned long long>(m.pseudo_rejected));
        else
            std::printf("%-6d %10s %10.4f %10.4f %12llu %12llu %12llu\n", m.task + 1,
                        "-", m.map_c, m.map_a,
                        static_cast<unsigned long long>(m.pseudo_easy),
                        static_cast<unsigned long long>(m.pseudo_hard),
                        static_cast<unsigned long long>(m.pseudo_rejected));
    }
}

int run_single(const pdet::ExperimentConfig& cfg) {
    const pdet::RunOutputs out = pdet::run_experiment(cfg, cfg.out_dir);
    std::printf("run: seed %llu, %zu tasks -> %s\n",
                static_cast<unsigned long long>(cfg.seed), out.metrics.size(),
                cfg.out_dir.c_str());
    print_metrics_table(out.metrics);
    return 0;
}

int run_ablation(const pdet::ExperimentConfig& cfg, const std::string& module) {
    pdet::ExperimentConfig off = cfg;
    if (module == "ppg") off.ppg = false;
    else if (module == "shared_pool") off.shared_pool = false;
    else if (module == "ddl") off.ddl = false;
    else {
        std::cerr << "unknown ablation module '" << module
                  << "' (expected ppg, shared_pool or ddl)\n";
        return 2;
    }

    pdet::ExperimentConfig on = cfg;
    on.out_dir = cfg.out_dir + "/ablate_" + module + "/on";
    off.out_dir = cfg.out_dir + "/ablate_" + module + "/off";

    const pdet::RunOutputs with_module = pdet::run_experiment(on, on.out_dir);
    const pdet::RunOutputs without_module = pdet::run_experiment(off, off.out_dir);

    std::printf("ablation of %s (seed %llu)\n", module.c_str(),
                static_cast<unsigned long long>(cfg.seed));
    std::printf("-- %s on --\n", module.c_str());
    print_metrics_table(with_module.metrics);
    std::printf("-- %s off --\n", module.c_str());
    print_metrics_table(without_module.metrics);

    // Paired rows, one per task and metric.
    std::string csv = "task,metric,with,without,delta\n";
    auto shortest = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (std::size_t t = 0; t < with_module.metrics.size(); ++t) {
        const auto& a = with_module.metrics[t];
        const auto& b = without_module.metrics[t];
        const std::string task = std::to_string(t + 1);
        if (a.map_p && b.map_p)
            csv += task + ",map_p," + shortest(*a.map_p) + "," + shortest(*b.map_p) +
                   "," + shortest(*a.map_p - *b.map_p) + "\n";
        csv += task + ",map_c," + shortest(a.map_c) + "," + shortest(b.map_c) + "," +
               shortest(a.map_c - b.map_c) + "\n";
        csv += task + ",map_a," + shortest(a.map_a) + "," + shortest(b.map_a) + "," +
               shortest(a.map_a - b.map_a) + "\n";
    }
    std::filesystem::create_directories(cfg.out_dir + "/ablate_" + module);
    std::ofstream table(cfg.out_dir + "/ablate_" + module + "/comparison.csv",
                        std::ios::binary);
    table << csv;
    std::printf("paired table -> %s/ablate_%s/comparison.csv\n", cfg.out_dir.c_str(),
                module.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual object detection sandbox: dual prompt pools, "
                 "prefix-tuned toy decoder, prototype-guided pseudo-labels"};
    app.require_subcommand(1);

    std::string config_path;
    std::string ablate_module;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool seed_set = false;

    CLI::App* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("config", config_path, "path to the experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    run->add_option("--out", out_override, "override the output directory");
    run->add_option("--ablate", ablate_module,
                    "run paired with/without a module (ppg, shared_pool, ddl)");

    bool inject_bug = false;
    CLI::App* selfcheck =
        app.add_subcommand("selfcheck", "run the oracle suites and report pass/fail");
    selfcheck->add_flag("--inject-bug", inject_bug,
                        "corrupt one analytic gradient (negative-control fixture)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            pdet::ExperimentConfig cfg = pdet::load_config(config_path);
            if (seed_set) cfg.seed = seed_override;
            if (!out_override.empty()) cfg.out_dir = out_override;
            if (!ablate_module.empty()) return run_ablation(cfg, ablate_module);
            return run_single(cfg);
        }
        if (selfcheck->parsed()) {
            pdet::SelfcheckOptions opt;
            opt.inject_bug = inject_bug;
            bool all_passed = true;
            for (const auto& suite : pdet::run_selfcheck(opt)) {
                std::printf("[%s] %-22s %s\n", suite.passed ? "PASS" : "FAIL",
                            suite.name.c_str(), suite.detail.c_str());
                all_passed = all_passed && suite.passed;
            }
            return all_passed ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
