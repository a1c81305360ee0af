#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "qbdc/data_io.hpp"
#include "qbdc/nn.hpp"

namespace qbdc::train {

struct TrainOptions {
    int batch_size = 200;
    int max_epochs = 100;
    int patience = 5;
    double standard_dropout_rate = 0.0;  // 0 disables the dropout-trained variant
};

template <typename T>
struct RmsPropState {
    T learning_rate = T(1e-3);
    T decay = T(0.9);
    T epsilon = T(1e-8);
    std::vector<Tensor<T>> r_weight;  // aligned with Network::layers
    std::vector<Tensor<T>> r_bias;

    static RmsPropState init(const nn::Network<T>& net, T learning_rate, T decay, T epsilon = T(1e-8)) {
        RmsPropState s;
        s.learning_rate = learning_rate;
        s.decay = decay;
        s.epsilon = epsilon;
        for (const auto& layer : net.layers) {
            s.r_weight.push_back(layer.spec.parameterized() ? Tensor<T>(layer.weights.shape) : Tensor<T>());
            s.r_bias.push_back(layer.spec.parameterized() ? Tensor<T>(layer.bias.shape) : Tensor<T>());
        }
        return s;
    }
};

namespace detail {

template <typename T>
void rmsprop_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& r, T lr, T decay, T eps) {
    if (!param.same_shape(grad) || !param.same_shape(r)) {
        throw std::invalid_argument("rmsprop: gradient/state shape does not match parameters");
    }
    for (std::size_t e = 0; e < param.size(); ++e) {
        const T g = grad.data[e];
        r.data[e] = decay * r.data[e] + (T(1) - decay) * g * g;
        param.data[e] -= lr * g / std::sqrt(r.data[e] + eps);
    }
}

}  // namespace detail

/// One RMSProp update: r <- decay*r + (1-decay)*g^2, then
/// theta <- theta - lr * g / sqrt(r + epsilon), elementwise.
template <typename T>
void rmsprop_step(nn::Network<T>& net, const nn::Gradients<T>& grads, RmsPropState<T>& state) {
    if (grads.weight.size() != net.layers.size() || state.r_weight.size() != net.layers.size()) {
        throw std::invalid_argument("rmsprop: gradients/state not aligned with network layers");
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!net.layers[i].spec.parameterized()) continue;
        detail::rmsprop_update(net.layers[i].weights, grads.weight[i], state.r_weight[i], state.learning_rate,
                               state.decay, state.epsilon);
        detail::rmsprop_update(net.layers[i].bias, grads.bias[i], state.r_bias[i], state.learning_rate,
                               state.decay, state.epsilon);
    }
}

/// Fraction of samples whose predicted label differs from the true label.
template <typename T>
double evaluate(const nn::Network<T>& net, const data::Subset& set) {
    if (set.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const int chunk = 512;
    long wrong = 0;
    for (int at = 0; at < set.size(); at += chunk) {
        const int n = std::min(chunk, set.size() - at);
        Tensor<T> x = data::gather_images<T>(*set.ds, set.indices.data() + at, n);
        std::vector<int> pred = nn::predict(net, x);
        for (int i = 0; i < n; ++i) {
            wrong += pred[static_cast<std::size_t>(i)] != set.labels[static_cast<std::size_t>(at + i)] ? 1 : 0;
        }
    }
    return static_cast<double>(wrong) / set.size();
}

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_error = 0.0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    double best_val_error = 1.0;
    int epochs_run = 0;
};

/// Minibatch RMSProp training with early stopping: iterates shuffled
/// minibatches, evaluates validation error after each epoch, stops when no
/// improvement was seen for `patience` epochs (or max_epochs), and restores
/// the parameters that achieved the best validation error. A nonzero
/// standard_dropout_rate applies per-sample unit dropout to hidden layers
/// during the training forward passes only.
template <typename T>
TrainResult train_until_early_stop(nn::Network<T>& net, const data::Subset& labeled, const data::Subset& validation,
                                   const TrainOptions& opts, RmsPropState<T>& state, std::mt19937_64& rng) {
    if (labeled.size() == 0) throw std::invalid_argument("train: empty labeled pool");
    if (validation.size() == 0) throw std::invalid_argument("train: empty validation set");
    if (opts.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (opts.standard_dropout_rate < 0.0 || opts.standard_dropout_rate >= 1.0) {
        throw std::invalid_argument("train: dropout rate must be in [0,1)");
    }

    TrainResult result;
    double best_err = evaluate(net, validation);
    nn::Network<T> best_net = net;
    int since_improvement = 0;

    std::vector<int> order(static_cast<std::size_t>(labeled.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (int at = 0; at < labeled.size(); at += opts.batch_size) {
            const int n = std::min(opts.batch_size, labeled.size() - at);
            std::vector<int> rows(static_cast<std::size_t>(n));
            std::vector<int> targets(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const int pos = order[static_cast<std::size_t>(at + i)];
                rows[static_cast<std::size_t>(i)] = labeled.indices[static_cast<std::size_t>(pos)];
                targets[static_cast<std::size_t>(i)] = labeled.labels[static_cast<std::size_t>(pos)];
            }
            Tensor<T> x = data::gather_images<T>(*labeled.ds, rows.data(), n);

            nn::ForwardTrace<T> trace;
            if (opts.standard_dropout_rate > 0.0) {
                nn::UnitDropout ud{opts.standard_dropout_rate, &rng};
                trace = nn::forward(net, x, nullptr, &ud);
            } else {
                trace = nn::forward(net, x);
            }
            loss_sum += nn::softmax_cross_entropy(trace.logits.reshaped({n, net.num_classes()}), targets) * n;
            nn::Gradients<T> grads = nn::backward(net, trace, targets);
            rmsprop_step(net, grads, state);
        }
        const double val_err = evaluate(net, validation);
        result.log.push_back({epoch, loss_sum / labeled.size(), val_err});
        result.epochs_run = epoch;

        if (val_err < best_err) {
            best_err = val_err;
            best_net = net;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (since_improvement > opts.patience) break;
        }
    }

    net = std::move(best_net);
    result.best_val_error = best_err;
    return result;
}

}  // namespace qbdc::train
