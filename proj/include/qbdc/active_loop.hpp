#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qbdc/committee.hpp"
#include "qbdc/data_io.hpp"
#include "qbdc/nn.hpp"
#include "qbdc/trainer.hpp"

namespace qbdc::active {

/// Disjoint labeled/unlabeled index sets over a fixed training pool, plus the
/// labels revealed so far (parallel to `labeled`).
struct Pools {
    const data::Dataset* ds = nullptr;
    std::vector<int> labeled;
    std::vector<int> unlabeled;
    std::vector<int> labeled_labels;

    static Pools fresh(const data::Dataset& d);
    data::Subset labeled_subset() const;
};

/// The labeler the loop queries. Simulated here, but any annotator that maps
/// a pool index to a class label can be substituted.
class Oracle {
  public:
    virtual ~Oracle() = default;
    virtual int reveal(int index) = 0;
    virtual long revealed_count() const = 0;
};

/// Simulated annotator: looks up held-back ground-truth labels and counts
/// each index at most once, however often it is re-queried.
class LookupOracle final : public Oracle {
  public:
    explicit LookupOracle(const std::vector<int>& truth) : truth_(&truth), revealed_(truth.size(), 0) {}

    int reveal(int index) override {
        const auto i = static_cast<std::size_t>(index);
        if (!revealed_.at(i)) {
            revealed_[i] = 1;
            ++count_;
        }
        return (*truth_)[i];
    }

    long revealed_count() const override { return count_; }

  private:
    const std::vector<int>* truth_;
    std::vector<std::uint8_t> revealed_;
    long count_ = 0;
};

enum class Strategy { qbdc, random_selection };

struct ActiveConfig {
    std::vector<nn::LayerSpec> architecture;
    int committee_size = 3;
    double dropout_prob = 0.5;
    int candidate_pool = 2000;  // K
    int batch_size = 200;
    int init_minibatches = 10;
    long label_budget = 0;  // absolute count; stop criterion
    Strategy strategy = Strategy::qbdc;
    std::uint64_t seed = 1;
    bool warm_start = true;
    train::TrainOptions train;
    double learning_rate = 1e-3;
    double decay = 0.9;
    double rms_epsilon = 1e-8;
};

struct RoundRecord {
    int round = 0;
    long labeled_count = 0;
    double val_error = 0.0;
    double test_error = 0.0;
    double seconds = 0.0;
};

struct EpochLogRow {
    int round = 0;
    train::TrainLogRow row;
};

struct RunResult {
    std::vector<RoundRecord> rounds;
    nn::Network<float> net;
    long committees_built = 0;
    long oracle_reveals = 0;
    std::vector<std::vector<int>> selections;  // per selection round
    std::vector<EpochLogRow> epoch_log;        // full-network training epochs
};

/// Moves `count` uniformly random unlabeled indices into the labeled pool,
/// revealing their labels.
void init_labeled(Pools& pools, Oracle& oracle, long count, std::mt19937_64& rng);

/// Draws min(K, |U|) distinct indices uniformly from the unlabeled pool.
std::vector<int> draw_candidates(const Pools& pools, int k, std::mt19937_64& rng);

/// Picks the batch_size highest-scoring candidates; ties at the cutoff are
/// broken uniformly at random among the tied candidates.
std::vector<int> select_batch(const std::vector<std::pair<int, int>>& scored, int batch_size,
                              std::mt19937_64& rng);

struct ExperimentState {
    nn::Network<float> net;
    Pools pools;
    Oracle* oracle = nullptr;
    train::RmsPropState<float> rms;
    data::Subset validation;
    data::Subset test;
    std::mt19937_64 rng;
    long committees_built = 0;
    std::vector<std::vector<int>> selections;
    std::vector<EpochLogRow> epoch_log;
};

/// One selection round: committee construction and last-layer retraining
/// (skipped entirely under random selection), candidate scoring, batch
/// selection, oracle labeling, pool update, and full-network retraining.
RoundRecord run_round(ExperimentState& st, const ActiveConfig& cfg, int round_index);

/// Full experiment: initial random labeling, initial training, then rounds
/// until the label budget is reached or the unlabeled pool runs dry. Labels
/// come from `oracle` when given, else from a LookupOracle over the pool's
/// ground truth.
RunResult run_experiment(const ActiveConfig& cfg, const data::Dataset& pool, const data::Dataset& validation,
                         const data::Dataset& test, Oracle* oracle = nullptr);

}  // namespace qbdc::active
