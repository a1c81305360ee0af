#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "qbdc/nn.hpp"

// Shared helpers for the unit tests and the acceptance suite. The gradient
// checker is the independent oracle for backpropagation: central finite
// differences of the forward loss, double precision.

namespace qbdc::testutil {

template <typename T>
Tensor<T> random_batch(const std::vector<int>& sample_shape, int n, std::mt19937_64& rng, double lo = 0.0,
                       double hi = 1.0) {
    std::vector<int> shape = sample_shape;
    shape.insert(shape.begin(), n);
    Tensor<T> t(shape);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data) v = static_cast<T>(u(rng));
    return t;
}

inline std::vector<int> random_labels(int n, int classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, classes - 1);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = u(rng);
    return y;
}

inline double rel_err(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-10) return std::abs(a - b);
    return std::abs(a - b) / scale;
}

/// Gradient-check instances need continuous activations: zero-initialized
/// biases can park a whole layer exactly at the ReLU kink (analytic
/// subgradients are valid there, but finite differences straddle the kink).
template <typename T>
void jitter_biases(nn::Network<T>& net, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& layer : net.layers) {
        for (auto& b : layer.bias.data) b = static_cast<T>(u(rng));
    }
}

struct GradCheck {
    double max_rel_err = 0.0;
    long checked = 0;
};

/// Central finite differences (step h) against backward()'s parameter
/// gradients, and optionally the input gradient. Double precision only.
inline GradCheck check_gradients(nn::Network<double>& net, Tensor<double> x, const std::vector<int>& y,
                                 bool check_input, double h = 1e-5) {
    const int n = x.shape[0];
    auto loss = [&]() {
        const auto tr = nn::forward(net, x);
        return nn::softmax_cross_entropy(tr.logits.reshaped({n, net.num_classes()}), y);
    };
    const auto trace = nn::forward(net, x);
    const auto grads = nn::backward(net, trace, y, check_input);

    GradCheck result;
    auto probe = [&](double& value, double analytic) {
        const double saved = value;
        value = saved + h;
        const double lp = loss();
        value = saved - h;
        const double lm = loss();
        value = saved;
        const double fd = (lp - lm) / (2.0 * h);
        result.max_rel_err = std::max(result.max_rel_err, rel_err(fd, analytic));
        ++result.checked;
    };

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!net.layers[i].spec.parameterized()) continue;
        for (std::size_t e = 0; e < net.layers[i].weights.size(); ++e) {
            probe(net.layers[i].weights.data[e], grads.weight[i].data[e]);
        }
        for (std::size_t e = 0; e < net.layers[i].bias.size(); ++e) {
            probe(net.layers[i].bias.data[e], grads.bias[i].data[e]);
        }
    }
    if (check_input) {
        for (std::size_t e = 0; e < x.size(); ++e) {
            probe(x.data[e], grads.input.data[e]);
        }
    }
    return result;
}

/// A small conv+dense stack exercising every layer kind. The pool precedes
/// the ReLU (equivalent for a monotone activation) so pooling windows hold
/// distinct continuous values: ReLU-flattened windows tie at exactly zero,
/// which makes finite differences ill-posed at the argmax.
inline std::vector<nn::LayerSpec> small_cnn_stack(int classes) {
    return {nn::LayerSpec::conv(3, 3, 3), nn::LayerSpec::maxpool(2), nn::LayerSpec::relu(),
            nn::LayerSpec::dense(6),      nn::LayerSpec::relu(),     nn::LayerSpec::dense(classes),
            nn::LayerSpec::softmax()};
}

/// Brute-force disagreement: count votes differing from the plurality label,
/// plurality resolved by scanning class indices upward.
inline int brute_force_disagreement(const std::vector<int>& votes, int classes) {
    int best_class = 0, best_count = -1;
    for (int c = 0; c < classes; ++c) {
        int count = 0;
        for (int v : votes) count += v == c ? 1 : 0;
        if (count > best_count) {
            best_count = count;
            best_class = c;
        }
    }
    int differing = 0;
    for (int v : votes) differing += v != best_class ? 1 : 0;
    return differing;
}

}  // namespace qbdc::testutil
