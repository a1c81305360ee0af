#include "qbdc/ref_kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace qbdc::ref {

namespace {

double& at4(Tensor<double>& t, int a, int b, int c, int d) {
    return t.data[((std::size_t(a) * t.shape[1] + b) * t.shape[2] + c) * t.shape[3] + d];
}
double get4(const Tensor<double>& t, int a, int b, int c, int d) {
    return t.data[((std::size_t(a) * t.shape[1] + b) * t.shape[2] + c) * t.shape[3] + d];
}
double& at2(Tensor<double>& t, int a, int b) { return t.data[std::size_t(a) * t.shape[1] + b]; }
double get2(const Tensor<double>& t, int a, int b) { return t.data[std::size_t(a) * t.shape[1] + b]; }

}  // namespace

Tensor<double> conv2d_forward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b) {
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    const int f = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = h - kh + 1, ow = wd - kw + 1;
    Tensor<double> out({n, f, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.data[j];
                    for (int ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx)
                                acc += get4(in, i, ci, oy + ky, ox + kx) * get4(w, j, ci, ky, kx);
                    at4(out, i, j, oy, ox) = acc;
                }
    return out;
}

ConvGrads conv2d_backward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& dout) {
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    const int f = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = h - kh + 1, ow = wd - kw + 1;
    ConvGrads g{Tensor<double>({n, c, h, wd}), Tensor<double>({f, c, kh, kw}), Tensor<double>({f})};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double d = get4(dout, i, j, oy, ox);
                    g.db.data[j] += d;
                    for (int ci = 0; ci < c; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                at4(g.dw, j, ci, ky, kx) += d * get4(in, i, ci, oy + ky, ox + kx);
                                at4(g.din, i, ci, oy + ky, ox + kx) += d * get4(w, j, ci, ky, kx);
                            }
                }
    return g;
}

Tensor<double> maxpool_forward(const Tensor<double>& in, int window) {
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    const int oh = h / window, ow = wd / window;
    Tensor<double> out({n, c, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double best = get4(in, i, ci, oy * window, ox * window);
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx)
                            best = std::max(best, get4(in, i, ci, oy * window + ky, ox * window + kx));
                    at4(out, i, ci, oy, ox) = best;
                }
    return out;
}

Tensor<double> maxpool_backward(const Tensor<double>& in, const Tensor<double>& dout, int window) {
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    const int oh = h / window, ow = wd / window;
    Tensor<double> din({n, c, h, wd});
    for (int i = 0; i < n; ++i)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    // first maximum in scan order receives the gradient
                    int by = oy * window, bx = ox * window;
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx)
                            if (get4(in, i, ci, oy * window + ky, ox * window + kx) > get4(in, i, ci, by, bx)) {
                                by = oy * window + ky;
                                bx = ox * window + kx;
                            }
                    at4(din, i, ci, by, bx) += get4(dout, i, ci, oy, ox);
                }
    return din;
}

Tensor<double> dense_forward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b) {
    const int n = in.shape[0], d = in.shape[1], k = w.shape[0];
    Tensor<double> out({n, k});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            double acc = b.data[j];
            for (int e = 0; e < d; ++e) acc += get2(in, i, e) * get2(w, j, e);
            at2(out, i, j) = acc;
        }
    return out;
}

DenseGrads dense_backward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& dout) {
    const int n = in.shape[0], d = in.shape[1], k = w.shape[0];
    DenseGrads g{Tensor<double>({n, d}), Tensor<double>({k, d}), Tensor<double>({k})};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            const double dv = get2(dout, i, j);
            g.db.data[j] += dv;
            for (int e = 0; e < d; ++e) {
                at2(g.dw, j, e) += dv * get2(in, i, e);
                at2(g.din, i, e) += dv * get2(w, j, e);
            }
        }
    return g;
}

Tensor<double> relu_forward(const Tensor<double>& in) {
    Tensor<double> out(in.shape);
    for (std::size_t e = 0; e < in.size(); ++e) out.data[e] = std::max(in.data[e], 0.0);
    return out;
}

Tensor<double> softmax_rows(const Tensor<double>& logits) {
    const int n = logits.shape[0], k = logits.shape[1];
    Tensor<double> probs({n, k});
    for (int i = 0; i < n; ++i) {
        double m = get2(logits, i, 0);
        for (int j = 1; j < k; ++j) m = std::max(m, get2(logits, i, j));
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(get2(logits, i, j) - m);
        for (int j = 0; j < k; ++j) at2(probs, i, j) = std::exp(get2(logits, i, j) - m) / sum;
    }
    return probs;
}

long double cross_entropy_direct(const Tensor<double>& logits, const std::vector<int>& targets) {
    const int n = logits.shape[0], k = logits.shape[1];
    long double total = 0.0L;
    for (int i = 0; i < n; ++i) {
        long double sum = 0.0L;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<long double>(get2(logits, i, j)));
        const long double p = std::exp(static_cast<long double>(get2(logits, i, targets[std::size_t(i)]))) / sum;
        total += -std::log(p);
    }
    return total / n;
}

Tensor<double> forward_logits(const nn::Network<double>& net, const Tensor<double>& batch,
                              const nn::DropoutMask* mask) {
    const int n = batch.shape[0];
    Tensor<double> cur = batch;
    Tensor<double> logits;
    for (int i = 0; i < static_cast<int>(net.layers.size()); ++i) {
        const auto& layer = net.layers[std::size_t(i)];
        switch (layer.spec.kind) {
            case nn::LayerKind::Conv: {
                std::vector<int> s = sample_shape_of(cur.shape);
                if (s.size() == 2) cur = cur.reshaped({n, 1, s[0], s[1]});
                cur = conv2d_forward(cur, layer.weights, layer.bias);
                break;
            }
            case nn::LayerKind::MaxPool: {
                std::vector<int> s = sample_shape_of(cur.shape);
                if (s.size() == 2) cur = cur.reshaped({n, 1, s[0], s[1]});
                cur = maxpool_forward(cur, layer.spec.window);
                break;
            }
            case nn::LayerKind::Dense:
                cur = dense_forward(cur.reshaped({n, static_cast<int>(cur.size()) / n}), layer.weights, layer.bias);
                break;
            case nn::LayerKind::ReLU:
                cur = relu_forward(cur);
                break;
            case nn::LayerKind::Softmax:
                logits = cur;
                cur = softmax_rows(cur.reshaped({n, static_cast<int>(cur.size()) / n}));
                break;
        }
        if (mask && mask->masks_layer(i)) {
            const auto& keep = mask->keep[std::size_t(i)];
            const double scale = 1.0 / (1.0 - mask->drop_prob);
            const int channels = static_cast<int>(keep.size());
            const std::size_t plane = cur.size() / (std::size_t(n) * channels);
            for (int s = 0; s < n; ++s)
                for (int ch = 0; ch < channels; ++ch)
                    for (std::size_t e = 0; e < plane; ++e) {
                        double& v = cur.data[(std::size_t(s) * channels + ch) * plane + e];
                        v = keep[std::size_t(ch)] ? v * scale : 0.0;
                    }
        }
    }
    if (logits.empty()) logits = cur;
    return logits;
}

}  // namespace qbdc::ref
