#pragma once

#include <algorithm>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qbdc/data_io.hpp"
#include "qbdc/nn.hpp"
#include "qbdc/trainer.hpp"

namespace qbdc::committee {

/// A partial network: the base network's layers below the head are shared and
/// frozen, a batchwise dropout mask fixes the member's identity, and only the
/// private copy of the last layer is trainable.
template <typename T>
struct CommitteeMember {
    const nn::Network<T>* base = nullptr;
    nn::DropoutMask mask;
    Tensor<T> last_weight;
    Tensor<T> last_bias;
};

template <typename T>
struct Committee {
    std::vector<CommitteeMember<T>> members;

    int size() const { return static_cast<int>(members.size()); }
};

/// Samples n members, each with an independent batchwise mask: every maskable
/// filter/unit is dropped with probability p_d; a layer that comes out fully
/// dropped is resampled. The last layer is copied from the base network.
template <typename T>
Committee<T> dropout_sampling(const nn::Network<T>& net, double p_d, int n, std::mt19937_64& rng) {
    if (p_d < 0.0 || p_d >= 1.0) throw std::invalid_argument("dropout_sampling: p_d must be in [0,1)");
    if (n < 1) throw std::invalid_argument("dropout_sampling: committee size must be >= 1");
    const int last = net.last_param_layer();
    if (last < 0) throw std::invalid_argument("dropout_sampling: network has no parameterized layer");

    const std::vector<int> maskable = nn::maskable_layers(net);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    Committee<T> c;
    for (int m = 0; m < n; ++m) {
        CommitteeMember<T> member;
        member.base = &net;
        member.mask.drop_prob = p_d;
        member.mask.keep.resize(net.layers.size());
        for (int li : maskable) {
            auto& keep = member.mask.keep[static_cast<std::size_t>(li)];
            const int width = nn::mask_width(net, li);
            keep.resize(static_cast<std::size_t>(width));
            bool any = false;
            while (!any) {
                for (int j = 0; j < width; ++j) {
                    keep[static_cast<std::size_t>(j)] = u(rng) < p_d ? 0 : 1;
                    any = any || keep[static_cast<std::size_t>(j)];
                }
            }
        }
        member.last_weight = net.layers[static_cast<std::size_t>(last)].weights;
        member.last_bias = net.layers[static_cast<std::size_t>(last)].bias;
        c.members.push_back(std::move(member));
    }
    return c;
}

/// Masked forward through the frozen layers below the head: the member's
/// feature representation, i.e. the input its private last layer consumes.
template <typename T>
Tensor<T> member_features(const CommitteeMember<T>& member, const Tensor<T>& batch) {
    const nn::Network<T>& base = *member.base;
    const int last = base.last_param_layer();
    const int n = batch.shape[0];
    if (last == 0) {
        // Single-layer base: features are the raw input.
        return batch.reshaped({n, static_cast<int>(batch.size()) / n});
    }
    nn::ForwardTrace<T> trace = nn::forward_prefix(base, batch, &member.mask, nullptr, last);
    const Tensor<T>& out = trace.outputs.back();
    return out.reshaped({n, static_cast<int>(out.size()) / n});
}

template <typename T>
Tensor<T> member_logits(const CommitteeMember<T>& member, const Tensor<T>& features) {
    Tensor<T> logits;
    kernels::dense_forward(features, member.last_weight, member.last_bias, logits);
    return logits;
}

template <typename T>
std::vector<int> member_predict(const CommitteeMember<T>& member, const Tensor<T>& batch) {
    return nn::argmax_rows(member_logits(member, member_features(member, batch)));
}

struct RetrainOptions {
    int batch_size = 200;
    int max_epochs = 20;
    int patience = 2;
    double learning_rate = 1e-3;
    double decay = 0.9;
    double epsilon = 1e-8;
};

namespace detail {

template <typename T>
double mean_loss(const Tensor<T>& features, const Tensor<T>& w, const Tensor<T>& b, const std::vector<int>& y) {
    Tensor<T> logits;
    kernels::dense_forward(features, w, b, logits);
    return nn::softmax_cross_entropy(logits, y);
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& m, const std::vector<int>& rows) {
    const int d = m.shape[1];
    Tensor<T> out({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(m.data.data() + static_cast<std::size_t>(rows[i]) * d, d,
                    out.data.data() + i * static_cast<std::size_t>(d));
    }
    return out;
}

template <typename T>
Tensor<T> features_of_subset(const CommitteeMember<T>& member, const data::Subset& set) {
    const int chunk = 512;
    Tensor<T> all;
    for (int at = 0; at < set.size(); at += chunk) {
        const int n = std::min(chunk, set.size() - at);
        Tensor<T> x = data::gather_images<T>(*set.ds, set.indices.data() + at, n);
        Tensor<T> f = member_features(member, x);
        if (all.empty()) {
            all = Tensor<T>({set.size(), f.shape[1]});
        }
        std::copy_n(f.data.data(), f.size(), all.data.data() + static_cast<std::size_t>(at) * f.shape[1]);
    }
    return all;
}

}  // namespace detail

/// Retrains only the member's private last layer by RMSProp on cross-entropy
/// over the labeled set, with early stopping on validation loss. The frozen
/// trunk makes the features constant, so they are computed once and cached.
template <typename T>
void retrain_last_layer(CommitteeMember<T>& member, const data::Subset& labeled, const data::Subset& validation,
                        const RetrainOptions& opts, std::mt19937_64& rng) {
    if (labeled.size() == 0) throw std::invalid_argument("retrain_last_layer: empty labeled pool");
    if (validation.size() == 0) throw std::invalid_argument("retrain_last_layer: empty validation set");

    const Tensor<T> feats = detail::features_of_subset(member, labeled);
    const Tensor<T> val_feats = detail::features_of_subset(member, validation);

    Tensor<T> w = member.last_weight;
    Tensor<T> b = member.last_bias;
    Tensor<T> rw(w.shape), rb(b.shape);
    const T lr = static_cast<T>(opts.learning_rate);
    const T decay = static_cast<T>(opts.decay);
    const T eps = static_cast<T>(opts.epsilon);

    double best_loss = detail::mean_loss(val_feats, w, b, validation.labels);
    Tensor<T> best_w = w, best_b = b;
    int since_improvement = 0;

    std::vector<int> order(static_cast<std::size_t>(labeled.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int at = 0; at < labeled.size(); at += opts.batch_size) {
            const int n = std::min(opts.batch_size, labeled.size() - at);
            std::vector<int> rows(order.begin() + at, order.begin() + at + n);
            Tensor<T> fb = detail::gather_rows(feats, rows);
            std::vector<int> targets(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) targets[static_cast<std::size_t>(i)] = labeled.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];

            Tensor<T> logits;
            kernels::dense_forward(fb, w, b, logits);
            Tensor<T> probs;
            kernels::softmax_rows(logits, probs);
            for (int i = 0; i < n; ++i) probs.data[std::size_t(i) * probs.shape[1] + targets[static_cast<std::size_t>(i)]] -= T(1);
            for (auto& v : probs.data) v /= static_cast<T>(n);

            Tensor<T> dw, db;
            kernels::dense_backward(fb, w, probs, static_cast<Tensor<T>*>(nullptr), dw, db);
            train::detail::rmsprop_update(w, dw, rw, lr, decay, eps);
            train::detail::rmsprop_update(b, db, rb, lr, decay, eps);
        }
        const double val_loss = detail::mean_loss(val_feats, w, b, validation.labels);
        if (val_loss < best_loss) {
            best_loss = val_loss;
            best_w = w;
            best_b = b;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (since_improvement > opts.patience) break;
        }
    }

    member.last_weight = std::move(best_w);
    member.last_bias = std::move(best_b);
}

/// Disagreement of a vote vector: the number of votes that differ from the
/// plurality label, ties broken toward the lowest class index.
inline int disagreement_from_votes(const std::vector<int>& votes, int num_classes) {
    if (votes.empty()) throw std::invalid_argument("disagreement: no votes");
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (int v : votes) {
        if (v < 0 || v >= num_classes) throw std::invalid_argument("disagreement: vote out of range");
        ++counts[static_cast<std::size_t>(v)];
    }
    int plurality = 0;
    for (int c = 1; c < num_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(plurality)]) plurality = c;
    }
    return static_cast<int>(votes.size()) - counts[static_cast<std::size_t>(plurality)];
}

/// Disagreement score of one sample (shape = the network's per-sample input).
template <typename T>
int disagreement_score(const Committee<T>& c, const Tensor<T>& sample) {
    if (c.members.empty()) throw std::invalid_argument("disagreement_score: empty committee");
    std::vector<int> batch_shape = sample.shape;
    batch_shape.insert(batch_shape.begin(), 1);
    const Tensor<T> batch = sample.reshaped(batch_shape);
    std::vector<int> votes;
    votes.reserve(c.members.size());
    for (const auto& m : c.members) votes.push_back(member_predict(m, batch)[0]);
    return disagreement_from_votes(votes, c.members.front().base->num_classes());
}

/// Scores every candidate by committee disagreement; order-preserving.
template <typename T>
std::vector<std::pair<int, int>> score_candidates(const Committee<T>& c, const data::Dataset& ds,
                                                  const std::vector<int>& candidate_ids) {
    if (candidate_ids.empty()) throw std::invalid_argument("score_candidates: empty candidate set");
    if (c.members.empty()) throw std::invalid_argument("score_candidates: empty committee");
    const int n = static_cast<int>(candidate_ids.size());
    const int classes = c.members.front().base->num_classes();

    std::vector<std::vector<int>> votes(c.members.size());
    const int chunk = 512;
    for (std::size_t m = 0; m < c.members.size(); ++m) {
        votes[m].reserve(static_cast<std::size_t>(n));
        for (int at = 0; at < n; at += chunk) {
            const int b = std::min(chunk, n - at);
            Tensor<T> x = data::gather_images<T>(ds, candidate_ids.data() + at, b);
            std::vector<int> pred = member_predict(c.members[m], x);
            votes[m].insert(votes[m].end(), pred.begin(), pred.end());
        }
    }

    std::vector<std::pair<int, int>> scored;
    scored.reserve(static_cast<std::size_t>(n));
    std::vector<int> sample_votes(c.members.size());
    for (int i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < c.members.size(); ++m) sample_votes[m] = votes[m][static_cast<std::size_t>(i)];
        scored.emplace_back(candidate_ids[static_cast<std::size_t>(i)], disagreement_from_votes(sample_votes, classes));
    }
    return scored;
}

}  // namespace qbdc::committee
