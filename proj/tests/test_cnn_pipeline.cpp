#include <doctest.h>

#include <random>

#include "qbdc/adversarial.hpp"
#include "qbdc/harness.hpp"

// End-to-end runs of the image-protocol CNN (20/40 conv filters, two dense
// hidden layers) on a synthetic image-shaped task: the committee must mask
// whole conv filters, and the adversarial probe must handle image tensors.

using namespace qbdc;

namespace {

// Noisy copies of a per-class template image: class evidence is spread over
// the whole frame, which a pooling CNN picks up quickly.
data::Dataset image_blobs(int classes, int per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> tpl(0.2, 0.8);
    std::normal_distribution<double> noise(0.0, 0.10);
    const int hw = 28 * 28;
    std::vector<std::vector<float>> templates(static_cast<std::size_t>(classes));
    // same templates for every seed, different noise
    std::mt19937_64 tpl_rng(99);
    for (auto& t : templates) {
        t.resize(static_cast<std::size_t>(hw));
        for (auto& v : t) v = static_cast<float>(tpl(tpl_rng));
    }

    data::Dataset img;
    img.images = Tensor<float>({classes * per_class, 28, 28});
    img.num_classes = classes;
    for (int c = 0; c < classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            const int row = c * per_class + s;
            img.labels.push_back(c);
            float* dst = img.images.data.data() + static_cast<std::size_t>(row) * hw;
            for (int e = 0; e < hw; ++e) {
                const double v = templates[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)] + noise(rng);
                dst[e] = static_cast<float>(std::min(std::max(v, 0.0), 1.0));
            }
        }
    }
    return img;
}

}  // namespace

TEST_CASE("protocol CNN runs the active loop on image data") {
    const data::Dataset pool = image_blobs(4, 75, 701);
    const data::Dataset val = image_blobs(4, 20, 702);
    const data::Dataset test = image_blobs(4, 20, 703);

    active::ActiveConfig cfg;
    cfg.architecture = harness::architecture_for(pool, {});
    cfg.committee_size = 3;
    cfg.dropout_prob = 0.5;
    cfg.candidate_pool = 100;
    cfg.batch_size = 50;
    cfg.init_minibatches = 1;
    cfg.label_budget = 150;
    cfg.strategy = active::Strategy::qbdc;
    cfg.seed = 3;
    cfg.learning_rate = 0.001;
    cfg.train.batch_size = 50;
    cfg.train.max_epochs = 8;
    cfg.train.patience = 8;

    const auto result = active::run_experiment(cfg, pool, val, test, nullptr);
    REQUIRE(result.rounds.size() == 3);
    CHECK(result.rounds.back().labeled_count == 150);
    CHECK(result.oracle_reveals == 150);
    CHECK(result.committees_built == 2);
    // widely separated clusters: even a briefly trained CNN beats chance
    CHECK(result.rounds.back().test_error < 0.5);

    SUBCASE("committee masks act on whole conv filters") {
        auto net = result.net;
        std::mt19937_64 rng(5);
        const auto committee = committee::dropout_sampling(net, 0.5, 1, rng);
        const auto& mask = committee.members[0].mask;
        CHECK(mask.keep[0].size() == 20);    // first conv: one flag per filter
        CHECK(mask.keep[3].size() == 40);    // second conv
        CHECK(mask.keep[6].size() == 100);   // hidden dense layers: per unit
        CHECK(mask.keep[8].size() == 100);
        CHECK_FALSE(mask.masks_layer(10));   // output layer stays intact
    }

    SUBCASE("fgsm probes image inputs") {
        const auto probe = data::Subset::of(test, {0, 1, 2, 3, 4, 5, 6, 7});
        const auto report = adv::count_adversarials(result.net, probe, {0.0, 0.25}, {});
        CHECK(report.rows[0].flipped == 0);
        CHECK(report.rows[1].probed == 8);

        const auto xb = data::gather_images<float>(test, {0});
        const auto x = xb.reshaped({28, 28});
        const auto x_adv = adv::fgsm_perturb(result.net, x, test.labels[0], {0.25, 0.0, 1.0});
        CHECK(x_adv.shape == std::vector<int>({28, 28}));
        for (std::size_t e = 0; e < x.size(); ++e) {
            CHECK(std::abs(x_adv.data[e] - x.data[e]) <= 0.25f + 1e-6f);
            CHECK(x_adv.data[e] >= 0.0f);
            CHECK(x_adv.data[e] <= 1.0f);
        }
    }
}
