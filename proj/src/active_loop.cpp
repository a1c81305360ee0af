#include "qbdc/active_loop.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace qbdc::active {

namespace {

// Partial Fisher-Yates: the first `take` entries of `items` become a uniform
// without-replacement sample.
std::vector<int> sample_without_replacement(std::vector<int> items, int take, std::mt19937_64& rng) {
    const int n = static_cast<int>(items.size());
    for (int i = 0; i < take; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(pick(rng))]);
    }
    items.resize(static_cast<std::size_t>(take));
    return items;
}

void move_to_labeled(Pools& pools, Oracle& oracle, const std::vector<int>& chosen) {
    std::vector<std::uint8_t> take(pools.ds->count(), 0);
    for (int idx : chosen) take[static_cast<std::size_t>(idx)] = 1;
    std::vector<int> remaining;
    remaining.reserve(pools.unlabeled.size() - chosen.size());
    for (int idx : pools.unlabeled) {
        if (!take[static_cast<std::size_t>(idx)]) remaining.push_back(idx);
    }
    if (remaining.size() + chosen.size() != pools.unlabeled.size()) {
        throw std::logic_error("pools: selected index not in the unlabeled pool");
    }
    pools.unlabeled = std::move(remaining);
    for (int idx : chosen) {
        pools.labeled.push_back(idx);
        pools.labeled_labels.push_back(oracle.reveal(idx));
    }
}

}  // namespace

Pools Pools::fresh(const data::Dataset& d) {
    Pools p;
    p.ds = &d;
    p.unlabeled.resize(static_cast<std::size_t>(d.count()));
    std::iota(p.unlabeled.begin(), p.unlabeled.end(), 0);
    return p;
}

data::Subset Pools::labeled_subset() const {
    data::Subset s;
    s.ds = ds;
    s.indices = labeled;
    s.labels = labeled_labels;
    return s;
}

void init_labeled(Pools& pools, Oracle& oracle, long count, std::mt19937_64& rng) {
    if (count < 0 || count > static_cast<long>(pools.unlabeled.size())) {
        throw std::invalid_argument("init_labeled: requested " + std::to_string(count) + " of " +
                                    std::to_string(pools.unlabeled.size()) + " unlabeled samples");
    }
    if (count == 0) return;
    const std::vector<int> chosen =
        sample_without_replacement(pools.unlabeled, static_cast<int>(count), rng);
    move_to_labeled(pools, oracle, chosen);
}

std::vector<int> draw_candidates(const Pools& pools, int k, std::mt19937_64& rng) {
    if (pools.unlabeled.empty()) {
        throw std::runtime_error("draw_candidates: unlabeled pool is exhausted");
    }
    const int take = std::min<int>(k, static_cast<int>(pools.unlabeled.size()));
    return sample_without_replacement(pools.unlabeled, take, rng);
}

std::vector<int> select_batch(const std::vector<std::pair<int, int>>& scored, int batch_size,
                              std::mt19937_64& rng) {
    if (batch_size < 1) throw std::invalid_argument("select_batch: batch size must be >= 1");
    if (static_cast<int>(scored.size()) < batch_size) {
        throw std::invalid_argument("select_batch: only " + std::to_string(scored.size()) + " candidates for a batch of " +
                                    std::to_string(batch_size));
    }
    std::vector<int> order(scored.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scored[static_cast<std::size_t>(a)].second > scored[static_cast<std::size_t>(b)].second; });

    const int cutoff = scored[static_cast<std::size_t>(order[static_cast<std::size_t>(batch_size - 1)])].second;
    std::vector<int> selected;
    std::vector<int> tied;
    for (const auto& [idx, score] : scored) {
        if (score > cutoff) selected.push_back(idx);
        else if (score == cutoff) tied.push_back(idx);
    }
    const int need = batch_size - static_cast<int>(selected.size());
    const std::vector<int> fill = sample_without_replacement(std::move(tied), need, rng);
    selected.insert(selected.end(), fill.begin(), fill.end());
    return selected;
}

namespace {

RoundRecord measure(ExperimentState& st, int round_index, double seconds) {
    RoundRecord rec;
    rec.round = round_index;
    rec.labeled_count = static_cast<long>(st.pools.labeled.size());
    rec.val_error = train::evaluate(st.net, st.validation);
    rec.test_error = train::evaluate(st.net, st.test);
    rec.seconds = seconds;
    return rec;
}

void retrain_full_network(ExperimentState& st, const ActiveConfig& cfg, int round_index) {
    if (!cfg.warm_start) {
        st.net = nn::build_network<float>(st.net.input_shape, cfg.architecture, st.rng());
        st.rms = train::RmsPropState<float>::init(st.net, static_cast<float>(cfg.learning_rate),
                                                  static_cast<float>(cfg.decay), static_cast<float>(cfg.rms_epsilon));
    }
    const train::TrainResult r =
        train::train_until_early_stop(st.net, st.pools.labeled_subset(), st.validation, cfg.train, st.rms, st.rng);
    for (const auto& row : r.log) st.epoch_log.push_back({round_index, row});
}

}  // namespace

RoundRecord run_round(ExperimentState& st, const ActiveConfig& cfg, int round_index) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::pair<int, int>> scored;
    if (cfg.strategy == Strategy::qbdc) {
        committee::Committee<float> c =
            committee::dropout_sampling(st.net, cfg.dropout_prob, cfg.committee_size, st.rng);
        ++st.committees_built;
        committee::RetrainOptions ropts;
        ropts.batch_size = cfg.train.batch_size;
        ropts.learning_rate = cfg.learning_rate;
        ropts.decay = cfg.decay;
        ropts.epsilon = cfg.rms_epsilon;
        for (auto& member : c.members) {
            committee::retrain_last_layer(member, st.pools.labeled_subset(), st.validation, ropts, st.rng);
        }
        const std::vector<int> candidates = draw_candidates(st.pools, cfg.candidate_pool, st.rng);
        scored = committee::score_candidates(c, *st.pools.ds, candidates);
    } else {
        // Random selection never touches the committee machinery.
        const std::vector<int> candidates = draw_candidates(st.pools, cfg.candidate_pool, st.rng);
        scored.reserve(candidates.size());
        for (int idx : candidates) scored.emplace_back(idx, 0);
    }

    const std::vector<int> batch = select_batch(scored, cfg.batch_size, st.rng);
    move_to_labeled(st.pools, *st.oracle, batch);
    st.selections.push_back(batch);

    retrain_full_network(st, cfg, round_index);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return measure(st, round_index, secs);
}

RunResult run_experiment(const ActiveConfig& cfg, const data::Dataset& pool, const data::Dataset& validation,
                         const data::Dataset& test, Oracle* oracle) {
    if (cfg.batch_size < 1 || cfg.init_minibatches < 0 || cfg.committee_size < 1) {
        throw std::invalid_argument("run_experiment: invalid configuration");
    }
    if (cfg.candidate_pool < cfg.batch_size) {
        throw std::invalid_argument("run_experiment: candidate pool K must be >= batch_size");
    }
    if (cfg.label_budget > pool.count()) {
        throw std::invalid_argument("run_experiment: label budget exceeds the pool");
    }
    const long init_count = static_cast<long>(cfg.init_minibatches) * cfg.batch_size;
    if (init_count > cfg.label_budget) {
        throw std::invalid_argument("run_experiment: initial labeling exceeds the label budget");
    }

    LookupOracle fallback(pool.labels);
    ExperimentState st{
        .net = {},
        .pools = Pools::fresh(pool),
        .oracle = oracle ? oracle : &fallback,
        .rms = {},
        .validation = data::Subset::all_of(validation),
        .test = data::Subset::all_of(test),
        .rng = std::mt19937_64(cfg.seed),
        .committees_built = 0,
        .selections = {},
        .epoch_log = {},
    };
    st.net = nn::build_network<float>(pool.sample_shape(), cfg.architecture, st.rng());
    st.rms = train::RmsPropState<float>::init(st.net, static_cast<float>(cfg.learning_rate),
                                              static_cast<float>(cfg.decay), static_cast<float>(cfg.rms_epsilon));

    RunResult result;

    const auto t0 = std::chrono::steady_clock::now();
    init_labeled(st.pools, *st.oracle, init_count, st.rng);
    retrain_full_network(st, cfg, 0);
    result.rounds.push_back(
        measure(st, 0, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));

    int round = 1;
    while (static_cast<long>(st.pools.labeled.size()) + cfg.batch_size <= cfg.label_budget &&
           static_cast<long>(st.pools.unlabeled.size()) >= cfg.batch_size) {
        result.rounds.push_back(run_round(st, cfg, round));
        ++round;
    }

    result.net = std::move(st.net);
    result.committees_built = st.committees_built;
    result.oracle_reveals = st.oracle->revealed_count();
    result.selections = std::move(st.selections);
    result.epoch_log = std::move(st.epoch_log);
    return result;
}

}  // namespace qbdc::active
