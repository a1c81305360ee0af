// Command-line harness for query-by-dropout-committee active learning
// experiments: `run` executes an experiment suite over seeds, `probe` runs
// the FGSM robustness comparison, `compare` builds a mean/min summary table
// from two curve files.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "qbdc/harness.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

// Every config key is mirrored as a flag; supplied flags override file values.
void add_config_flags(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    static const std::vector<std::string> keys = {
        "kind",        "dataset",      "mnist_dir",  "blob_classes", "blob_per_class",
        "blob_dim",    "blob_separation", "train_count", "val_count", "test_count",
        "split_seed",  "n",            "p_d",        "batch_size",   "init_minibatches",
        "K",           "budget",       "lr",         "decay",        "epsilon",
        "patience",    "max_epochs",   "standard_dropout_rate",      "warm_start",
        "hidden",      "seeds",        "out_dir",    "emit_train_log",
        "eps_grid",    "probe_count",
    };
    for (const auto& key : keys) {
        cmd->add_option_function<std::string>(
            "--" + key, [&args, key](const std::string& v) { args.overrides.emplace_back(key, v); },
            "config key '" + key + "'");
    }
}

int run_command(const CommonArgs& args, const char* forced_kind) {
    auto overrides = args.overrides;
    if (forced_kind) overrides.emplace_back("kind", forced_kind);
    const qbdc::harness::ExperimentConfig cfg = qbdc::harness::parse_config(args.config_path, overrides);
    qbdc::harness::run_suite(cfg);
    std::cout << "wrote " << cfg.out_dir << "/curves.csv and summary.txt";
    if (cfg.kind == qbdc::harness::Kind::adversarial_probe) std::cout << " and adversarial.csv";
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"query-by-dropout-committee active learning harness"};
    app.require_subcommand(1);

    CommonArgs run_args;
    CLI::App* run = app.add_subcommand("run", "run an experiment suite over seeds");
    add_config_flags(run, run_args);

    CommonArgs probe_args;
    CLI::App* probe = app.add_subcommand("probe", "adversarial robustness probe (FGSM)");
    add_config_flags(probe, probe_args);

    std::string curves_a, curves_b, label_a = "method_a", label_b = "method_b", out_path;
    CLI::App* compare = app.add_subcommand("compare", "mean/min summary table from two curve files");
    compare->add_option("curves_a", curves_a, "first curves.csv")->required();
    compare->add_option("curves_b", curves_b, "second curves.csv")->required();
    compare->add_option("--label-a", label_a, "row label for the first file");
    compare->add_option("--label-b", label_b, "row label for the second file");
    compare->add_option("--out", out_path, "write the table to a file instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(run_args, nullptr);
        if (probe->parsed()) return run_command(probe_args, "adversarial_probe");
        if (compare->parsed()) {
            const qbdc::harness::SummaryTable table =
                qbdc::harness::compare_methods(curves_a, curves_b, label_a, label_b);
            if (out_path.empty()) {
                std::cout << table.to_text();
            } else {
                std::ofstream f(out_path);
                if (!f.is_open()) throw std::runtime_error("cannot write " + out_path);
                f << table.to_text();
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
