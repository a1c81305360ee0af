#include <doctest.h>

#include <cmath>
#include <random>

#include "qbdc/adversarial.hpp"
#include "qbdc/trainer.hpp"
#include "support/test_util.hpp"

using namespace qbdc;

namespace {

struct Trained {
    data::Dataset train_ds = data::synthetic_blobs(3, 120, 6, 3.0, 51);
    data::Dataset test_ds = data::synthetic_blobs(3, 60, 6, 3.0, 52);
    nn::Network<float> net;

    Trained() {
        net = nn::build_network<float>(train_ds.sample_shape(),
                                       {nn::LayerSpec::dense(12), nn::LayerSpec::relu(), nn::LayerSpec::dense(3),
                                        nn::LayerSpec::softmax()},
                                       19);
        auto state = train::RmsPropState<float>::init(net, 0.01f, 0.9f);
        train::TrainOptions opts;
        opts.batch_size = 36;
        opts.max_epochs = 40;
        opts.patience = 40;
        std::mt19937_64 rng(7);
        train::train_until_early_stop(net, data::Subset::all_of(train_ds), data::Subset::all_of(test_ds), opts,
                                      state, rng);
    }

    Tensor<float> sample(int row) const {
        const auto x = data::gather_images<float>(train_ds, {row});
        return x.reshaped(sample_shape_of(x.shape));
    }

    double loss_of(const Tensor<float>& x, int y) const {
        std::vector<int> shape = x.shape;
        shape.insert(shape.begin(), 1);
        const auto trace = nn::forward(net, x.reshaped(shape));
        return nn::softmax_cross_entropy(trace.logits, {y});
    }
};

}  // namespace

TEST_CASE("epsilon zero returns the input unchanged") {
    Trained t;
    const auto x = t.sample(0);
    const auto x_adv = adv::fgsm_perturb(t.net, x, t.train_ds.labels[0], {0.0, 0.0, 1.0});
    CHECK(x_adv.data == x.data);

    adv::FgsmParams params{0.0, 0.0, 1.0};
    const auto report = adv::count_adversarials(t.net, data::Subset::all_of(t.test_ds), {0.0}, params);
    CHECK(report.rows[0].flipped == 0);
}

TEST_CASE("perturbation is exactly epsilon times the gradient sign") {
    // single linear layer; wide clamp so clamping cannot interfere
    auto net = nn::build_network<float>({1, 4},
                                        {nn::LayerSpec::dense(2), nn::LayerSpec::softmax()}, 3);
    const Tensor<float> x({1, 4}, {0.3f, 0.6f, 0.1f, 0.9f});
    const double eps = 0.05;
    const auto x_adv = adv::fgsm_perturb(net, x, 1, {eps, -10.0, 10.0});

    const auto trace = nn::forward(net, x.reshaped({1, 1, 4}));
    const auto grads = nn::backward(net, trace, {1}, true);
    for (std::size_t e = 0; e < x.size(); ++e) {
        const float g = grads.input.data[e];
        const float sign = g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f);
        const float delta = x_adv.data[e] - x.data[e];
        CHECK(delta == doctest::Approx(eps * sign).epsilon(1e-6));
        const bool in_set = std::abs(delta) < 1e-7 || std::abs(std::abs(delta) - eps) < 1e-6;
        CHECK(in_set);
    }
}

TEST_CASE("loss increases under FGSM for nearly all probes") {
    Trained t;
    int increased = 0;
    const int probes = 100;
    for (int i = 0; i < probes; ++i) {
        const auto x = t.sample(i);
        const int y = t.train_ds.labels[static_cast<std::size_t>(i)];
        const auto x_adv = adv::fgsm_perturb(t.net, x, y, {0.1, 0.0, 1.0});
        if (t.loss_of(x_adv, y) >= t.loss_of(x, y)) ++increased;
    }
    CHECK(increased >= 95);
}

TEST_CASE("max-norm bound and clamping hold always") {
    Trained t;
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> pick_eps(0.0, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
        const int row = trial % t.train_ds.count();
        const double eps = pick_eps(rng);
        const auto x = t.sample(row);
        const auto x_adv = adv::fgsm_perturb(t.net, x, t.train_ds.labels[static_cast<std::size_t>(row)],
                                             {eps, 0.0, 1.0});
        for (std::size_t e = 0; e < x.size(); ++e) {
            CHECK(std::abs(x_adv.data[e] - x.data[e]) <= eps + 1e-7);
            CHECK(x_adv.data[e] >= 0.0f);
            CHECK(x_adv.data[e] <= 1.0f);
        }
    }
}

TEST_CASE("only previously-correct samples can count as adversarial") {
    Trained t;
    const auto probe = data::Subset::all_of(t.test_ds);
    const auto clean = nn::predict(t.net, data::gather_images<float>(t.test_ds, probe.indices));
    long correct = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) correct += clean[i] == probe.labels[i] ? 1 : 0;

    const auto report = adv::count_adversarials(t.net, probe, {0.05, 0.1, 0.3}, {});
    for (const auto& row : report.rows) {
        CHECK(row.flipped <= correct);
        CHECK(row.probed == t.test_ds.count());
        CHECK(row.flip_rate == doctest::Approx(static_cast<double>(row.flipped) / row.probed));
    }

    SUBCASE("a network that is always wrong yields zero adversarials") {
        data::Subset shifted = probe;
        for (auto& y : shifted.labels) y = (y + 1) % 3;  // make every clean prediction wrong...
        // ...except where the net already disagreed with the true label; build
        // a label set the net never predicts correctly instead
        const auto preds = nn::predict(t.net, data::gather_images<float>(t.test_ds, shifted.indices));
        for (std::size_t i = 0; i < shifted.labels.size(); ++i) shifted.labels[i] = (preds[i] + 1) % 3;
        const auto rep = adv::count_adversarials(t.net, shifted, {0.2}, {});
        CHECK(rep.rows[0].flipped == 0);
    }
}

TEST_CASE("flip counts are reproducible") {
    // untrained random net on random data
    auto net = nn::build_network<float>({1, 5},
                                        {nn::LayerSpec::dense(6), nn::LayerSpec::relu(), nn::LayerSpec::dense(4),
                                         nn::LayerSpec::softmax()},
                                        77);
    const data::Dataset ds = data::synthetic_blobs(4, 50, 5, 1.0, 9);
    const auto probe = data::Subset::all_of(ds);
    const std::vector<double> grid{0.05, 0.1, 0.2};
    const auto a = adv::count_adversarials(net, probe, grid, {});
    const auto b = adv::count_adversarials(net, probe, grid, {});
    for (std::size_t g = 0; g < grid.size(); ++g) {
        CHECK(a.rows[g].flipped == b.rows[g].flipped);
        CHECK(a.rows[g].probed == b.rows[g].probed);
    }
}

TEST_CASE("bad probe inputs are rejected") {
    Trained t;
    data::Subset empty;
    empty.ds = &t.test_ds;
    CHECK_THROWS_AS(adv::count_adversarials(t.net, empty, {0.1}, {}), std::invalid_argument);

    const Tensor<float> outside({1, 4}, {2.0f, 0.0f, 0.0f, 0.0f});
    auto net = nn::build_network<float>({1, 4}, {nn::LayerSpec::dense(2), nn::LayerSpec::softmax()}, 3);
    CHECK_THROWS_AS(adv::fgsm_perturb(net, outside, 0, {0.1, 0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(adv::fgsm_perturb(net, Tensor<float>({1, 4}), 0, {-0.1, 0.0, 1.0}), std::invalid_argument);
}
