#include <doctest.h>

#include <random>

#include "qbdc/committee.hpp"
#include "support/test_util.hpp"

using namespace qbdc;
using testutil::random_batch;

namespace {

struct Fixture {
    data::Dataset ds = data::synthetic_blobs(4, 120, 6, 6.0, 2);
    data::Dataset val = data::synthetic_blobs(4, 40, 6, 6.0, 3);
    std::vector<nn::LayerSpec> stack{nn::LayerSpec::dense(8), nn::LayerSpec::relu(), nn::LayerSpec::dense(8),
                                     nn::LayerSpec::relu(), nn::LayerSpec::dense(4), nn::LayerSpec::softmax()};

    nn::Network<float> trained_net(int epochs = 40, float lr = 0.01f) {
        auto net = nn::build_network<float>(ds.sample_shape(), stack, 33);
        auto state = train::RmsPropState<float>::init(net, lr, 0.9f);
        train::TrainOptions opts;
        opts.batch_size = 40;
        opts.max_epochs = epochs;
        opts.patience = epochs;
        std::mt19937_64 rng(8);
        train::train_until_early_stop(net, data::Subset::all_of(ds), data::Subset::all_of(val), opts, state, rng);
        return net;
    }
};

bool same_params(const nn::Network<float>& a, const nn::Network<float>& b) {
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].weights.data != b.layers[i].weights.data) return false;
        if (a.layers[i].bias.data != b.layers[i].bias.data) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("p_d zero: members replicate the full network exactly") {
    Fixture f;
    auto net = f.trained_net(5);
    std::mt19937_64 rng(4);
    auto committee = committee::dropout_sampling(net, 0.0, 3, rng);

    const auto x = data::gather_images<float>(f.ds, {0, 1, 2, 3, 4});
    const auto full = nn::forward(net, x);
    for (const auto& member : committee.members) {
        const auto logits = committee::member_logits(member, committee::member_features(member, x));
        REQUIRE(logits.size() == full.logits.size());
        for (std::size_t e = 0; e < logits.size(); ++e) CHECK(logits.data[e] == full.logits.data[e]);
        CHECK(committee::member_predict(member, x) == nn::predict(net, x));
    }
}

TEST_CASE("p_d 0.5: empirical drop frequency near one half") {
    auto net = nn::build_network<float>({1, 6},
                                        {nn::LayerSpec::dense(16), nn::LayerSpec::relu(), nn::LayerSpec::dense(16),
                                         nn::LayerSpec::relu(), nn::LayerSpec::dense(4), nn::LayerSpec::softmax()},
                                        5);
    std::mt19937_64 rng(123);
    long dropped = 0, total = 0;
    for (int trial = 0; trial < 1500; ++trial) {
        auto c = committee::dropout_sampling(net, 0.5, 1, rng);
        for (int li : nn::maskable_layers(net)) {
            for (auto k : c.members[0].mask.keep[static_cast<std::size_t>(li)]) {
                dropped += k ? 0 : 1;
                ++total;
            }
        }
    }
    const double freq = static_cast<double>(dropped) / static_cast<double>(total);
    CHECK(freq > 0.45);
    CHECK(freq < 0.55);
}

TEST_CASE("fixed seed reproduces the same distinct masks") {
    Fixture f;
    auto net = f.trained_net(2);
    auto sample = [&](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return committee::dropout_sampling(net, 0.5, 3, rng);
    };
    const auto a = sample(11);
    const auto b = sample(11);
    for (int m = 0; m < 3; ++m) {
        CHECK(a.members[static_cast<std::size_t>(m)].mask.keep == b.members[static_cast<std::size_t>(m)].mask.keep);
    }
    CHECK(a.members[0].mask.keep != a.members[1].mask.keep);
    CHECK(a.members[1].mask.keep != a.members[2].mask.keep);
    CHECK(a.members[0].mask.keep != a.members[2].mask.keep);
}

TEST_CASE("masks never touch the last layer and never drop whole layers") {
    Fixture f;
    auto net = f.trained_net(2);
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        auto c = committee::dropout_sampling(net, 0.9, 1, rng);
        const auto& mask = c.members[0].mask;
        CHECK_FALSE(mask.masks_layer(net.last_param_layer()));
        for (int li : nn::maskable_layers(net)) {
            bool any = false;
            for (auto k : mask.keep[static_cast<std::size_t>(li)]) any = any || k;
            CHECK(any);
        }
    }
    CHECK_THROWS_AS(committee::dropout_sampling(net, 1.0, 3, rng), std::invalid_argument);
    CHECK_THROWS_AS(committee::dropout_sampling(net, 0.5, 0, rng), std::invalid_argument);
}

TEST_CASE("retraining a converged all-keep member barely moves its training loss") {
    Fixture f;
    auto net = f.trained_net(60);
    std::mt19937_64 rng(14);
    auto c = committee::dropout_sampling(net, 0.0, 1, rng);
    auto& member = c.members[0];

    const auto labeled = data::Subset::all_of(f.ds);
    const auto feats = committee::member_features(member, data::gather_images<float>(f.ds, labeled.indices));

    // Converge the head with full-batch steps until the training loss itself
    // is below the tolerance; the data is separable, so this is reachable.
    {
        Tensor<float> rw(member.last_weight.shape), rb(member.last_bias.shape);
        for (int step = 0; step < 4000; ++step) {
            Tensor<float> logits;
            kernels::dense_forward(feats, member.last_weight, member.last_bias, logits);
            Tensor<float> probs;
            kernels::softmax_rows(logits, probs);
            const int n = feats.shape[0];
            for (int i = 0; i < n; ++i) probs.data[std::size_t(i) * 4 + labeled.labels[std::size_t(i)]] -= 1.0f;
            for (auto& v : probs.data) v /= static_cast<float>(n);
            Tensor<float> dw, db;
            kernels::dense_backward(feats, member.last_weight, probs, static_cast<Tensor<float>*>(nullptr), dw, db);
            train::detail::rmsprop_update(member.last_weight, dw, rw, 0.01f, 0.9f, 1e-8f);
            train::detail::rmsprop_update(member.last_bias, db, rb, 0.01f, 0.9f, 1e-8f);
        }
    }
    const double before =
        nn::softmax_cross_entropy(committee::member_logits(member, feats), labeled.labels);
    REQUIRE(before < 1e-3);

    committee::RetrainOptions opts;
    opts.batch_size = 40;
    committee::retrain_last_layer(member, labeled, /*validation=*/labeled, opts, rng);
    const double after =
        nn::softmax_cross_entropy(committee::member_logits(member, feats), labeled.labels);
    CHECK(std::abs(after - before) < 1e-3);
}

TEST_CASE("member head gradient matches finite differences") {
    auto net = nn::build_network<double>({1, 6},
                                         {nn::LayerSpec::dense(8), nn::LayerSpec::relu(), nn::LayerSpec::dense(4),
                                          nn::LayerSpec::softmax()},
                                         17);
    std::mt19937_64 rng(31);
    auto c = committee::dropout_sampling(net, 0.5, 1, rng);
    auto& member = c.members[0];

    const auto x = random_batch<double>({1, 6}, 5, rng);
    const auto y = testutil::random_labels(5, 4, rng);
    const Tensor<double> feats = committee::member_features(member, x);

    Tensor<double> logits;
    kernels::dense_forward(feats, member.last_weight, member.last_bias, logits);
    Tensor<double> probs;
    kernels::softmax_rows(logits, probs);
    for (int i = 0; i < 5; ++i) probs.data[std::size_t(i) * 4 + y[static_cast<std::size_t>(i)]] -= 1.0;
    for (auto& v : probs.data) v /= 5.0;
    Tensor<double> dw, db;
    kernels::dense_backward(feats, member.last_weight, probs, static_cast<Tensor<double>*>(nullptr), dw, db);

    auto loss = [&]() {
        Tensor<double> z;
        kernels::dense_forward(feats, member.last_weight, member.last_bias, z);
        return nn::softmax_cross_entropy(z, y);
    };
    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t e = 0; e < member.last_weight.size(); ++e) {
        const double saved = member.last_weight.data[e];
        member.last_weight.data[e] = saved + h;
        const double lp = loss();
        member.last_weight.data[e] = saved - h;
        const double lm = loss();
        member.last_weight.data[e] = saved;
        max_rel = std::max(max_rel, testutil::rel_err((lp - lm) / (2 * h), dw.data[e]));
    }
    for (std::size_t e = 0; e < member.last_bias.size(); ++e) {
        const double saved = member.last_bias.data[e];
        member.last_bias.data[e] = saved + h;
        const double lp = loss();
        member.last_bias.data[e] = saved - h;
        const double lm = loss();
        member.last_bias.data[e] = saved;
        max_rel = std::max(max_rel, testutil::rel_err((lp - lm) / (2 * h), db.data[e]));
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("a member losing most of its units stays worse than the full network") {
    Fixture f;
    auto net = f.trained_net(60);
    const auto labeled = data::Subset::all_of(f.ds);
    const double full_error = train::evaluate(net, labeled);

    committee::CommitteeMember<float> member;
    member.base = &net;
    member.mask.drop_prob = 0.5;
    member.mask.keep.resize(net.layers.size());
    member.mask.keep[0] = {1, 0, 0, 0, 0, 0, 0, 0};  // one unit survives in each hidden layer
    member.mask.keep[2] = {0, 0, 0, 1, 0, 0, 0, 0};
    const int last = net.last_param_layer();
    member.last_weight = net.layers[static_cast<std::size_t>(last)].weights;
    member.last_bias = net.layers[static_cast<std::size_t>(last)].bias;

    std::mt19937_64 rng(3);
    committee::RetrainOptions opts;
    opts.batch_size = 40;
    committee::retrain_last_layer(member, labeled, data::Subset::all_of(f.val), opts, rng);

    const auto x = data::gather_images<float>(f.ds, labeled.indices);
    const auto pred = committee::member_predict(member, x);
    long wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != labeled.labels[i] ? 1 : 0;
    const double member_error = static_cast<double>(wrong) / static_cast<double>(pred.size());
    CHECK(member_error > full_error);
}

TEST_CASE("disagreement scores") {
    CHECK(committee::disagreement_from_votes({7, 7, 7}, 10) == 0);
    CHECK(committee::disagreement_from_votes({7, 2, 7}, 10) == 1);
    // three singletons: plurality is the lowest tied index (1), so score 2
    CHECK(committee::disagreement_from_votes({3, 1, 5}, 10) == 2);
    CHECK_THROWS_AS(committee::disagreement_from_votes({}, 4), std::invalid_argument);

    SUBCASE("matches brute force on all n=3, classes=4 vote vectors") {
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                for (int c = 0; c < 4; ++c) {
                    const std::vector<int> votes{a, b, c};
                    CHECK(committee::disagreement_from_votes(votes, 4) ==
                          testutil::brute_force_disagreement(votes, 4));
                }
    }
}

TEST_CASE("score_candidates is order-preserving, bounded, and elementwise") {
    Fixture f;
    auto net = f.trained_net(4);
    std::mt19937_64 rng(21);
    auto c = committee::dropout_sampling(net, 0.5, 3, rng);

    std::vector<int> ids{5, 17, 3, 99, 42, 7, 300, 11};
    const auto scored = committee::score_candidates(c, f.ds, ids);
    REQUIRE(scored.size() == ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        CHECK(scored[i].first == ids[i]);
        CHECK(scored[i].second >= 0);
        CHECK(scored[i].second <= c.size() - 1);
        const auto x = data::gather_images<float>(f.ds, {ids[i]});
        CHECK(scored[i].second == committee::disagreement_score(c, x.reshaped(sample_shape_of(x.shape))));
    }

    SUBCASE("permutation equivariance") {
        std::vector<int> perm{300, 5, 11, 99, 3, 47, 17, 42, 7};
        perm.erase(perm.begin() + 5);  // drop the id not in the original set
        const auto scored_perm = committee::score_candidates(c, f.ds, perm);
        for (const auto& [id, score] : scored_perm) {
            const auto it = std::find_if(scored.begin(), scored.end(), [&](auto p) { return p.first == id; });
            REQUIRE(it != scored.end());
            CHECK(it->second == score);
        }
    }

    SUBCASE("single-member committees never disagree") {
        auto solo = committee::dropout_sampling(net, 0.5, 1, rng);
        for (const auto& [id, score] : committee::score_candidates(solo, f.ds, ids)) CHECK(score == 0);
    }

    SUBCASE("empty candidate set is rejected") {
        CHECK_THROWS_AS(committee::score_candidates(c, f.ds, {}), std::invalid_argument);
    }
}

TEST_CASE("committee construction and retraining never mutate the base network") {
    Fixture f;
    auto net = f.trained_net(6);
    const auto snapshot = net;
    std::mt19937_64 rng(77);
    auto c = committee::dropout_sampling(net, 0.5, 3, rng);
    committee::RetrainOptions opts;
    opts.batch_size = 40;
    for (auto& member : c.members) {
        const auto mask_before = member.mask.keep;
        committee::retrain_last_layer(member, data::Subset::all_of(f.ds), data::Subset::all_of(f.val), opts, rng);
        CHECK(member.mask.keep == mask_before);
    }
    CHECK(same_params(net, snapshot));
    CHECK_THROWS_AS(
        committee::retrain_last_layer(c.members[0], data::Subset{}, data::Subset::all_of(f.val), opts, rng),
        std::invalid_argument);
}
