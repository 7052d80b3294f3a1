// tablab command-line harness.
//
// Subcommands:
//   prepare   --config F            split + preprocess datasets into the cache
//   run       --config F [--resume] execute the (method x hyperparameter x seed) sweep
//   report    --in DIR --out DIR    aggregate results.jsonl into report.csv, ranks.csv, curves/
//   selfcheck                       run the fast invariant suite
//
// Exit codes: 0 success, 1 selfcheck failure, 2 config error, 3 data error,
// 4 run error.

#include <CLI11.hpp>

#include <iostream>

#include "tablab/tablab.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRun = 4;

tablab::ExperimentConfig load_with_offset(const std::string& path, std::uint64_t seed_offset) {
    tablab::ExperimentConfig cfg = tablab::load_config(path);
    if (seed_offset) {
        for (auto& s : cfg.seeds) s += seed_offset;
        cfg.validate();
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tabular transformer training and augmentation benchmark harness"};
    app.require_subcommand(1);

    std::string config_path, in_dir, out_dir;
    std::uint64_t seed_offset = 0;
    bool resume = false;

    auto* prepare = app.add_subcommand("prepare", "split and preprocess the configured dataset");
    prepare->add_option("--config", config_path, "experiment config (JSON)")->required();
    prepare->add_option("--seed-offset", seed_offset, "shift every seed by this amount");

    auto* run = app.add_subcommand("run", "execute the configured sweep");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_flag("--resume", resume, "skip runs whose record files already exist");
    run->add_option("--seed-offset", seed_offset, "shift every seed by this amount");

    auto* report = app.add_subcommand("report", "aggregate results into tables and curves");
    report->add_option("--in", in_dir, "directory containing results.jsonl")->required();
    report->add_option("--out", out_dir, "directory for report.csv, ranks.csv, curves/")->required();

    auto* selfcheck = app.add_subcommand("selfcheck", "run the fast invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) {
            tablab::cmd_prepare(load_with_offset(config_path, seed_offset));
            return kExitOk;
        }
        if (run->parsed()) {
            const std::size_t failures = tablab::cmd_run(load_with_offset(config_path, seed_offset), resume);
            if (failures) {
                std::cerr << failures << " run(s) failed; see runs/*.error.txt\n";
                return kExitRun;
            }
            return kExitOk;
        }
        if (report->parsed()) {
            tablab::cmd_report(in_dir, out_dir);
            return kExitOk;
        }
        if (selfcheck->parsed()) {
            return tablab::cmd_selfcheck(std::cout) ? kExitOk : kExitCheckFailed;
        }
    } catch (const tablab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tablab::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRun;
    }
    return kExitOk;
}
