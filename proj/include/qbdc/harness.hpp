#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qbdc/active_loop.hpp"
#include "qbdc/adversarial.hpp"
#include "qbdc/data_io.hpp"

namespace qbdc::harness {

enum class Kind { qbdc, random_selection, qbdc_dropout_trained, full_baseline, adversarial_probe };

std::string kind_name(Kind k);

/// Complete experiment description; every field maps 1:1 to a config-file key
/// (and a CLI flag of the same name).
struct ExperimentConfig {
    Kind kind = Kind::qbdc;

    // dataset
    std::string dataset = "mnist";  // "mnist" or "blobs"
    std::string mnist_dir = "data";
    int blob_classes = 4;
    int blob_per_class = 875;
    int blob_dim = 8;
    double blob_separation = 3.0;
    int train_count = 0;  // 0 = dataset default (mnist: 50000, blobs: 4/7 of pool)
    int val_count = 0;    // 0 = dataset default (mnist: 10000, blobs: 1/7)
    int test_count = 0;   // blobs only; 0 = remainder
    std::uint64_t split_seed = 9001;

    // active learning (protocol defaults)
    int n = 3;              // committee size
    double p_d = 0.5;       // committee dropout probability
    int batch_size = 200;
    int init_minibatches = 10;
    int k = 0;              // candidate pool size; 0 = 10 * batch_size
    double budget = 0.3;    // labeled fraction of the training pool

    // training
    double lr = 0.001;
    double decay = 0.9;
    double epsilon = 1e-8;
    int patience = 5;
    int max_epochs = 100;
    double standard_dropout_rate = 0.5;  // used by the dropout-trained variant only
    bool warm_start = true;
    std::vector<int> hidden = {32};  // MLP widths for blob datasets

    // harness
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "out";
    bool emit_train_log = false;

    // adversarial probe
    std::vector<double> eps_grid = {0.05, 0.1, 0.15, 0.2, 0.25};
    int probe_count = 1000;
};

/// Parses a key=value config file ('#' comments), then applies flag
/// overrides, then validates. Pass an empty path to start from defaults.
/// QBDC_OUT_DIR, when set, overrides the output directory.
ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

struct SummaryRow {
    std::string method;
    double mean_error = 0.0;  // percent
    double min_error = 0.0;   // percent
};

struct SummaryTable {
    std::vector<SummaryRow> rows;
    std::string to_text() const;
};

/// Runs the configured experiment over all seeds and writes curves.csv,
/// summary.txt and (for probes) adversarial.csv into the output directory.
/// Partial outputs are removed on failure.
void run_suite(const ExperimentConfig& cfg);

/// Aligned mean/min table at the final budget point of two curve files.
/// Rejects inputs whose seed sets or final budgets differ.
SummaryTable compare_methods(const std::string& curves_a, const std::string& curves_b,
                             const std::string& label_a, const std::string& label_b);

// Exposed for tests: one parsed curve row.
struct CurveRow {
    std::uint64_t seed = 0;
    int round = 0;
    long labeled_count = 0;
    double val_error = 0.0;
    double test_error = 0.0;
};

std::vector<CurveRow> read_curves(const std::string& path);

/// The protocol CNN for 2-D image datasets and an MLP for flat blob
/// datasets.
std::vector<nn::LayerSpec> architecture_for(const data::Dataset& ds, const std::vector<int>& hidden);

struct DatasetSplits {
    data::Dataset pool;
    data::Dataset validation;
    data::Dataset test;
};

DatasetSplits load_splits(const ExperimentConfig& cfg);

active::ActiveConfig make_active_config(const ExperimentConfig& cfg, const DatasetSplits& splits,
                                        std::uint64_t seed);

}  // namespace qbdc::harness
