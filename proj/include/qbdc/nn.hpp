#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbdc/kernels.hpp"
#include "qbdc/tensor.hpp"

namespace qbdc::nn {

enum class LayerKind { Conv, MaxPool, Dense, ReLU, Softmax };

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "Conv";
        case LayerKind::MaxPool: return "MaxPool";
        case LayerKind::Dense: return "Dense";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::Softmax: return "Softmax";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    int filters = 0, kernel_h = 0, kernel_w = 0;  // Conv
    int window = 0;                               // MaxPool
    int width = 0;                                // Dense

    static LayerSpec conv(int filters, int kh, int kw) {
        LayerSpec s;
        s.kind = LayerKind::Conv;
        s.filters = filters;
        s.kernel_h = kh;
        s.kernel_w = kw;
        return s;
    }
    static LayerSpec maxpool(int window) {
        LayerSpec s;
        s.kind = LayerKind::MaxPool;
        s.window = window;
        return s;
    }
    static LayerSpec dense(int width) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.width = width;
        return s;
    }
    static LayerSpec relu() {
        LayerSpec s;
        s.kind = LayerKind::ReLU;
        return s;
    }
    static LayerSpec softmax() {
        LayerSpec s;
        s.kind = LayerKind::Softmax;
        return s;
    }

    bool parameterized() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
};

template <typename T>
struct Layer {
    LayerSpec spec;
    Tensor<T> weights;  // Conv: [F,C,kh,kw], Dense: [K,D]
    Tensor<T> bias;     // [F] / [K]
};

/// Batchwise dropout mask: one keep-vector per masked layer, indexed by layer
/// position in the network. Conv layers are masked per filter, hidden Dense
/// layers per unit; input and the last parameterized layer are never masked.
struct DropoutMask {
    double drop_prob = 0.0;                        // p_d used to sample it
    std::vector<std::vector<std::uint8_t>> keep;   // empty vector = layer not masked

    bool masks_layer(int i) const {
        return i < static_cast<int>(keep.size()) && !keep[static_cast<std::size_t>(i)].empty();
    }
};

template <typename T>
struct Network {
    std::vector<int> input_shape;  // per-sample shape, e.g. {28,28} or {1,8}
    std::vector<Layer<T>> layers;
    std::vector<std::vector<int>> out_shapes;  // per-sample output shape of each layer

    int last_param_layer() const {
        for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
            if (layers[static_cast<std::size_t>(i)].spec.parameterized()) return i;
        }
        return -1;
    }

    /// Number of parameterized layers (the architecture depth M).
    int depth() const {
        int m = 0;
        for (const auto& l : layers) m += l.spec.parameterized() ? 1 : 0;
        return m;
    }

    int num_classes() const {
        if (layers.empty()) return 0;
        const auto& s = out_shapes.back();
        return s.size() == 1 ? s[0] : 0;
    }
};

template <typename T>
struct ForwardTrace {
    const Network<T>* net = nullptr;
    int batch = 0;
    Tensor<T> input;
    std::vector<Tensor<T>> outputs;               // per layer, post-mask values as consumed downstream
    std::vector<std::vector<std::int64_t>> pool_argmax;
    std::vector<Tensor<T>> unit_dropout;          // per layer, per-sample keep scales (empty unless used)
    DropoutMask mask;
    bool has_mask = false;
    Tensor<T> logits;  // pre-softmax activations a
    Tensor<T> probs;   // softmax output P
};

template <typename T>
struct Gradients {
    std::vector<Tensor<T>> weight;  // aligned with Network::layers; empty for non-parameterized
    std::vector<Tensor<T>> bias;
    Tensor<T> input;
    bool has_input_grad = false;
};

/// Per-sample unit dropout used when training the full network with standard
/// dropout; one Bernoulli draw per unit per sample, inverted-dropout rescale.
struct UnitDropout {
    double rate = 0.0;
    std::mt19937_64* rng = nullptr;
};

namespace detail {

inline std::string layer_desc(int i, const LayerSpec& s) {
    std::string d = "layer " + std::to_string(i) + " (" + kind_name(s.kind);
    if (s.kind == LayerKind::Conv) {
        d += " " + std::to_string(s.filters) + "@" + std::to_string(s.kernel_h) + "x" + std::to_string(s.kernel_w);
    } else if (s.kind == LayerKind::Dense) {
        d += " " + std::to_string(s.width);
    } else if (s.kind == LayerKind::MaxPool) {
        d += " " + std::to_string(s.window) + "x" + std::to_string(s.window);
    }
    return d + ")";
}

[[noreturn]] inline void reject(int i, const LayerSpec& s, const std::string& why) {
    throw std::invalid_argument(layer_desc(i, s) + ": " + why);
}

/// Treats 2-D samples as one-channel images for Conv/MaxPool.
inline std::vector<int> as_chw(const std::vector<int>& s) {
    if (s.size() == 2) return {1, s[0], s[1]};
    return s;
}

inline std::size_t flat_size(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace detail

/// Walks the stack and computes each layer's per-sample output shape,
/// validating compatibility. Throws naming the offending layer.
inline std::vector<std::vector<int>> compute_shapes(const std::vector<int>& input_shape,
                                                    const std::vector<LayerSpec>& stack) {
    if (input_shape.empty()) throw std::invalid_argument("network: empty input shape");
    for (int d : input_shape) {
        if (d <= 0) throw std::invalid_argument("network: nonpositive input dimension");
    }
    std::vector<std::vector<int>> shapes;
    std::vector<int> cur = input_shape;
    for (int i = 0; i < static_cast<int>(stack.size()); ++i) {
        const LayerSpec& s = stack[static_cast<std::size_t>(i)];
        switch (s.kind) {
            case LayerKind::Conv: {
                if (s.filters <= 0 || s.kernel_h <= 0 || s.kernel_w <= 0)
                    detail::reject(i, s, "filter count and kernel size must be positive");
                std::vector<int> chw = detail::as_chw(cur);
                if (chw.size() != 3) detail::reject(i, s, "needs a 2-D or 3-D input, got " + shape_str(cur));
                if (chw[1] < s.kernel_h || chw[2] < s.kernel_w)
                    detail::reject(i, s, "kernel exceeds input " + shape_str(cur));
                cur = {s.filters, chw[1] - s.kernel_h + 1, chw[2] - s.kernel_w + 1};
                break;
            }
            case LayerKind::MaxPool: {
                if (s.window <= 0) detail::reject(i, s, "window must be positive");
                std::vector<int> chw = detail::as_chw(cur);
                if (chw.size() != 3) detail::reject(i, s, "needs a 2-D or 3-D input, got " + shape_str(cur));
                if (chw[1] < s.window || chw[2] < s.window)
                    detail::reject(i, s, "window exceeds input " + shape_str(cur));
                cur = {chw[0], chw[1] / s.window, chw[2] / s.window};
                break;
            }
            case LayerKind::Dense: {
                if (s.width <= 0) detail::reject(i, s, "width must be positive");
                cur = {s.width};
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::Softmax: {
                if (i != static_cast<int>(stack.size()) - 1)
                    detail::reject(i, s, "softmax is only valid as the final layer");
                if (cur.size() != 1) detail::reject(i, s, "needs a flat input, got " + shape_str(cur));
                break;
            }
        }
        shapes.push_back(cur);
    }
    return shapes;
}

/// Builds a network with Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out)))
/// and zero biases.
template <typename T>
Network<T> build_network(std::vector<int> input_shape, const std::vector<LayerSpec>& stack,
                         std::uint64_t seed) {
    Network<T> net;
    net.input_shape = std::move(input_shape);
    net.out_shapes = compute_shapes(net.input_shape, stack);

    std::mt19937_64 rng(seed);
    std::vector<int> cur = net.input_shape;
    for (int i = 0; i < static_cast<int>(stack.size()); ++i) {
        const LayerSpec& s = stack[static_cast<std::size_t>(i)];
        Layer<T> layer;
        layer.spec = s;
        if (s.kind == LayerKind::Conv) {
            std::vector<int> chw = detail::as_chw(cur);
            const int fan_in = chw[0] * s.kernel_h * s.kernel_w;
            const int fan_out = s.filters * s.kernel_h * s.kernel_w;
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> u(-limit, limit);
            layer.weights = Tensor<T>({s.filters, chw[0], s.kernel_h, s.kernel_w});
            for (auto& v : layer.weights.data) v = static_cast<T>(u(rng));
            layer.bias = Tensor<T>({s.filters});
        } else if (s.kind == LayerKind::Dense) {
            const int d = static_cast<int>(detail::flat_size(cur));
            const double limit = std::sqrt(6.0 / (d + s.width));
            std::uniform_real_distribution<double> u(-limit, limit);
            layer.weights = Tensor<T>({s.width, d});
            for (auto& v : layer.weights.data) v = static_cast<T>(u(rng));
            layer.bias = Tensor<T>({s.width});
        }
        net.layers.push_back(std::move(layer));
        cur = net.out_shapes[static_cast<std::size_t>(i)];
    }
    return net;
}

/// Layers eligible for batchwise dropout masking: Conv layers and Dense
/// layers other than the last parameterized one.
template <typename T>
std::vector<int> maskable_layers(const Network<T>& net) {
    std::vector<int> out;
    const int last = net.last_param_layer();
    for (int i = 0; i < static_cast<int>(net.layers.size()); ++i) {
        const auto& s = net.layers[static_cast<std::size_t>(i)].spec;
        if (s.parameterized() && i != last) out.push_back(i);
    }
    return out;
}

template <typename T>
int mask_width(const Network<T>& net, int layer) {
    const auto& s = net.layers[static_cast<std::size_t>(layer)].spec;
    return s.kind == LayerKind::Conv ? s.filters : s.width;
}

template <typename T>
void validate_mask(const Network<T>& net, const DropoutMask& mask) {
    if (mask.drop_prob < 0.0 || mask.drop_prob >= 1.0)
        throw std::invalid_argument("mask: drop probability must be in [0,1)");
    const int last = net.last_param_layer();
    for (int i = 0; i < static_cast<int>(mask.keep.size()); ++i) {
        const auto& kv = mask.keep[static_cast<std::size_t>(i)];
        if (kv.empty()) continue;
        if (i >= static_cast<int>(net.layers.size()))
            throw std::invalid_argument("mask: keep-vector for nonexistent layer " + std::to_string(i));
        const auto& s = net.layers[static_cast<std::size_t>(i)].spec;
        if (!s.parameterized() || i == last)
            detail::reject(i, s, "not a maskable layer");
        if (static_cast<int>(kv.size()) != mask_width(net, i))
            detail::reject(i, s, "keep-vector length " + std::to_string(kv.size()) + " does not match layer width " +
                                     std::to_string(mask_width(net, i)));
        bool any = false;
        for (auto k : kv) any = any || (k != 0);
        if (!any) detail::reject(i, s, "mask drops every unit of the layer");
    }
}

namespace detail {

template <typename T>
void validate_stack(const Network<T>& net) {
    if (net.layers.empty()) throw std::invalid_argument("network: no layers");
    if (net.out_shapes.size() != net.layers.size())
        throw std::invalid_argument("network: stale shape cache; rebuild with compute_shapes");
    for (int i = 0; i < static_cast<int>(net.layers.size()); ++i) {
        const auto& l = net.layers[static_cast<std::size_t>(i)];
        if (l.spec.kind == LayerKind::Softmax && i != static_cast<int>(net.layers.size()) - 1)
            reject(i, l.spec, "softmax is only valid as the final layer");
    }
}

// Applies the batchwise keep/rescale factors to a layer output in place.
template <typename T>
void apply_channel_mask(Tensor<T>& out, const std::vector<std::uint8_t>& keep, double drop_prob) {
    const T scale = static_cast<T>(1.0 / (1.0 - drop_prob));
    std::vector<T> factors(keep.size());
    bool all_keep_unit = true;
    for (std::size_t c = 0; c < keep.size(); ++c) {
        factors[c] = keep[c] ? scale : T(0);
        all_keep_unit = all_keep_unit && keep[c] && scale == T(1);
    }
    if (all_keep_unit) return;
    kernels::scale_channels(out, factors);
}

}  // namespace detail

/// Runs the first `num_layers` layers of the network. Used for full forward
/// passes and for committee feature extraction (the frozen trunk below the
/// head); the mask is validated against the complete network either way.
template <typename T>
ForwardTrace<T> forward_prefix(const Network<T>& net, const Tensor<T>& batch, const DropoutMask* mask,
                               const UnitDropout* unit_dropout, int num_layers) {
    detail::validate_stack(net);
    if (num_layers < 0 || num_layers > static_cast<int>(net.layers.size()))
        throw std::invalid_argument("forward: bad layer count");
    if (batch.rank() < 2) throw std::invalid_argument("forward: batch must have a leading sample dimension");
    if (sample_shape_of(batch.shape) != net.input_shape)
        throw std::invalid_argument("forward: batch sample shape " + shape_str(sample_shape_of(batch.shape)) +
                                    " does not match network input " + shape_str(net.input_shape));
    if (mask) validate_mask(net, *mask);
    const bool use_unit_dropout = unit_dropout && unit_dropout->rate > 0.0;
    if (use_unit_dropout) {
        if (!unit_dropout->rng) throw std::invalid_argument("forward: unit dropout needs a generator");
        if (unit_dropout->rate >= 1.0) throw std::invalid_argument("forward: dropout rate must be in [0,1)");
    }

    const int n = batch.shape[0];
    const int last_param = net.last_param_layer();

    ForwardTrace<T> trace;
    trace.net = &net;
    trace.batch = n;
    trace.input = batch;
    trace.outputs.resize(static_cast<std::size_t>(num_layers));
    trace.pool_argmax.resize(static_cast<std::size_t>(num_layers));
    trace.unit_dropout.resize(static_cast<std::size_t>(num_layers));
    if (mask) {
        trace.mask = *mask;
        trace.has_mask = true;
    }

    Tensor<T> cur = batch;
    for (int i = 0; i < num_layers; ++i) {
        const Layer<T>& layer = net.layers[static_cast<std::size_t>(i)];
        Tensor<T> out;
        switch (layer.spec.kind) {
            case LayerKind::Conv: {
                std::vector<int> chw = detail::as_chw(sample_shape_of(cur.shape));
                Tensor<T> in4 = cur.reshaped({n, chw[0], chw[1], chw[2]});
                kernels::conv2d_forward(in4, layer.weights, layer.bias, out);
                break;
            }
            case LayerKind::MaxPool: {
                std::vector<int> chw = detail::as_chw(sample_shape_of(cur.shape));
                Tensor<T> in4 = cur.reshaped({n, chw[0], chw[1], chw[2]});
                kernels::maxpool_forward(in4, layer.spec.window, out, trace.pool_argmax[static_cast<std::size_t>(i)]);
                break;
            }
            case LayerKind::Dense: {
                const int d = static_cast<int>(cur.size() / static_cast<std::size_t>(n));
                Tensor<T> flat = cur.reshaped({n, d});
                if (layer.weights.shape[1] != d)
                    detail::reject(i, layer.spec, "input width " + std::to_string(d) + " does not match weights " +
                                                      shape_str(layer.weights.shape));
                kernels::dense_forward(flat, layer.weights, layer.bias, out);
                break;
            }
            case LayerKind::ReLU:
                kernels::relu_forward(cur, out);
                break;
            case LayerKind::Softmax:
                trace.logits = cur;
                kernels::softmax_rows(cur.reshaped({n, cur.shape.back()}), out);
                trace.probs = out;
                break;
        }

        const bool maskable = layer.spec.parameterized() && i != last_param;
        if (mask && mask->masks_layer(i)) {
            detail::apply_channel_mask(out, mask->keep[static_cast<std::size_t>(i)], mask->drop_prob);
        }
        if (use_unit_dropout && maskable) {
            Tensor<T> factors(out.shape);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            const T scale = static_cast<T>(1.0 / (1.0 - unit_dropout->rate));
            for (auto& v : factors.data) v = u(*unit_dropout->rng) < unit_dropout->rate ? T(0) : scale;
            kernels::multiply_inplace(out, factors);
            trace.unit_dropout[static_cast<std::size_t>(i)] = std::move(factors);
        }

        trace.outputs[static_cast<std::size_t>(i)] = out;
        cur = std::move(out);
    }
    return trace;
}

/// Forward pass. Returns the full trace; trace.logits holds the pre-softmax
/// activations and trace.probs the softmax output. With a mask, dropped
/// filters/units contribute exactly zero and kept ones are rescaled by
/// 1/(1-p_d). `unit_dropout`, when set, additionally applies per-sample unit
/// dropout on maskable layers (used for dropout-trained networks).
template <typename T>
ForwardTrace<T> forward(const Network<T>& net, const Tensor<T>& batch, const DropoutMask* mask = nullptr,
                        const UnitDropout* unit_dropout = nullptr) {
    ForwardTrace<T> trace =
        forward_prefix(net, batch, mask, unit_dropout, static_cast<int>(net.layers.size()));
    if (net.layers.back().spec.kind != LayerKind::Softmax) {
        const int n = trace.batch;
        trace.logits = trace.outputs.back();
        kernels::softmax_rows(trace.logits.reshaped({n, static_cast<int>(trace.logits.size()) / n}), trace.probs);
    }
    return trace;
}

/// Mean cross-entropy of logits against integer targets, computed with max
/// subtraction; the per-sample losses are accumulated in double.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
    if (logits.empty() || targets.empty()) throw std::invalid_argument("cross_entropy: empty batch");
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [N,K]");
    const int n = logits.shape[0], k = logits.shape[1];
    if (static_cast<int>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy: targets length does not match batch");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = targets[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: target out of range");
        const T* z = logits.data.data() + std::size_t(i) * k;
        T m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
        T sum = T(0);
        for (int j = 0; j < k; ++j) sum += std::exp(z[j] - m);
        total += -(static_cast<double>(z[y] - m) - std::log(static_cast<double>(sum)));
    }
    return total / n;
}

/// Backpropagation of the mean cross-entropy loss. The softmax and the loss
/// are fused: the gradient at the logits is (P - one_hot(y)) / batch.
template <typename T>
Gradients<T> backward(const Network<T>& net, const ForwardTrace<T>& trace, const std::vector<int>& targets,
                      bool want_input_grad = false) {
    if (trace.net != &net) throw std::invalid_argument("backward: trace was produced by a different network");
    if (static_cast<int>(targets.size()) != trace.batch)
        throw std::invalid_argument("backward: targets length does not match traced batch");

    const int n = trace.batch;
    const int k = net.num_classes();
    if (k <= 0) throw std::invalid_argument("backward: network output is not a class vector");

    Gradients<T> grads;
    grads.weight.resize(net.layers.size());
    grads.bias.resize(net.layers.size());

    Tensor<T> grad = trace.probs;  // [N,K]
    for (int i = 0; i < n; ++i) {
        const int y = targets[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw std::invalid_argument("backward: target out of range");
        grad.data[std::size_t(i) * k + y] -= T(1);
    }
    for (auto& v : grad.data) v /= static_cast<T>(n);

    auto input_of = [&](int i) -> const Tensor<T>& {
        return i == 0 ? trace.input : trace.outputs[static_cast<std::size_t>(i) - 1];
    };

    int start = static_cast<int>(net.layers.size()) - 1;
    if (net.layers.back().spec.kind == LayerKind::Softmax) --start;

    for (int i = start; i >= 0; --i) {
        const Layer<T>& layer = net.layers[static_cast<std::size_t>(i)];
        const Tensor<T>& in = input_of(i);
        const bool need_din = i > 0 || want_input_grad;

        // Undo the forward's post-layer scaling first: grad currently refers
        // to the post-mask output.
        if (!trace.unit_dropout[static_cast<std::size_t>(i)].empty()) {
            kernels::multiply_inplace(grad, trace.unit_dropout[static_cast<std::size_t>(i)]);
        }
        if (trace.has_mask && trace.mask.masks_layer(i)) {
            const auto& keep = trace.mask.keep[static_cast<std::size_t>(i)];
            const T scale = static_cast<T>(1.0 / (1.0 - trace.mask.drop_prob));
            std::vector<T> factors(keep.size());
            for (std::size_t c = 0; c < keep.size(); ++c) factors[c] = keep[c] ? scale : T(0);
            kernels::scale_channels(grad, factors);
        }

        Tensor<T> din;
        switch (layer.spec.kind) {
            case LayerKind::Conv: {
                std::vector<int> chw = detail::as_chw(sample_shape_of(in.shape));
                Tensor<T> in4 = in.reshaped({n, chw[0], chw[1], chw[2]});
                kernels::conv2d_backward(in4, layer.weights, grad, need_din ? &din : nullptr,
                                         grads.weight[static_cast<std::size_t>(i)],
                                         grads.bias[static_cast<std::size_t>(i)]);
                break;
            }
            case LayerKind::MaxPool: {
                if (need_din) {
                    std::vector<int> chw = detail::as_chw(sample_shape_of(in.shape));
                    kernels::maxpool_backward(grad, trace.pool_argmax[static_cast<std::size_t>(i)],
                                              {n, chw[0], chw[1], chw[2]}, din);
                }
                break;
            }
            case LayerKind::Dense: {
                const int d = static_cast<int>(in.size() / static_cast<std::size_t>(n));
                Tensor<T> flat = in.reshaped({n, d});
                Tensor<T> grad2 = grad.reshaped({n, static_cast<int>(grad.size()) / n});
                kernels::dense_backward(flat, layer.weights, grad2, need_din ? &din : nullptr,
                                        grads.weight[static_cast<std::size_t>(i)],
                                        grads.bias[static_cast<std::size_t>(i)]);
                break;
            }
            case LayerKind::ReLU:
                if (need_din) kernels::relu_backward(in, grad, din);
                break;
            case LayerKind::Softmax:
                detail::reject(i, layer.spec, "softmax is only valid as the final layer");
        }

        if (!need_din) break;
        grad = din.reshaped(in.shape);
    }

    if (want_input_grad) {
        grads.input = grad;
        grads.has_input_grad = true;
    }
    return grads;
}

/// Per-sample argmax of the logits; ties break toward the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("argmax: logits must be [N,K]");
    const int n = logits.shape[0], k = logits.shape[1];
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* z = logits.data.data() + std::size_t(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j) {
            if (z[j] > z[best]) best = j;
        }
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

template <typename T>
std::vector<int> predict(const Network<T>& net, const Tensor<T>& batch, const DropoutMask* mask = nullptr) {
    ForwardTrace<T> trace = forward(net, batch, mask);
    const int n = batch.shape[0];
    return argmax_rows(trace.logits.reshaped({n, static_cast<int>(trace.logits.size()) / n}));
}

}  // namespace qbdc::nn
