#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>

#include "qbdc/tensor.hpp"

// OpenMP-parallel compute kernels. Every output element is produced by exactly
// one thread with a fixed inner summation order, so results are bitwise
// identical for any thread count. A serial reference implementation of the
// same contracts lives in ref_kernels.hpp and is used by tests and the
// benchmark.

namespace qbdc::kernels {

inline constexpr std::int64_t kOmpMinWork = 1 << 12;

namespace detail {
inline void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}
}  // namespace detail

/// out[n,f,oy,ox] = b[f] + sum_{c,ky,kx} in[n,c,oy+ky,ox+kx] * w[f,c,ky,kx]
/// Valid convolution, stride 1, no padding.
template <typename T>
void conv2d_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& out) {
    detail::require(in.rank() == 4, "conv2d: input must be [N,C,H,W]");
    detail::require(w.rank() == 4, "conv2d: weights must be [F,C,kh,kw]");
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    const int f = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    detail::require(w.shape[1] == c, "conv2d: channel mismatch");
    detail::require(h >= kh && wd >= kw, "conv2d: kernel larger than input");
    detail::require(b.rank() == 1 && b.shape[0] == f, "conv2d: bias must be [F]");
    const int oh = h - kh + 1, ow = wd - kw + 1;
    out = Tensor<T>({n, f, oh, ow});

    const std::int64_t work = std::int64_t(n) * f * oh * ow * c * kh * kw;
#pragma omp parallel for collapse(2) schedule(static) if (work >= kOmpMinWork)
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < f; ++j) {
            const T* x = in.data.data() + std::size_t(i) * c * h * wd;
            const T* wf = w.data.data() + std::size_t(j) * c * kh * kw;
            T* o = out.data.data() + (std::size_t(i) * f + j) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = b.data[j];
                    for (int ci = 0; ci < c; ++ci) {
                        const T* xc = x + std::size_t(ci) * h * wd;
                        const T* wc = wf + std::size_t(ci) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const T* xrow = xc + std::size_t(oy + ky) * wd + ox;
                            const T* wrow = wc + std::size_t(ky) * kw;
                            for (int kx = 0; kx < kw; ++kx) acc += xrow[kx] * wrow[kx];
                        }
                    }
                    o[std::size_t(oy) * ow + ox] = acc;
                }
            }
        }
    }
}

/// Gradients of conv2d_forward. din may be null when the input gradient is
/// not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& dout,
                     Tensor<T>* din, Tensor<T>& dw, Tensor<T>& db) {
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    const int f = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = h - kh + 1, ow = wd - kw + 1;
    detail::require(dout.shape == std::vector<int>({n, f, oh, ow}), "conv2d_backward: dout shape");
    dw = Tensor<T>({f, c, kh, kw});
    db = Tensor<T>({f});

#pragma omp parallel for schedule(static) if (std::int64_t(f) * n * oh * ow >= kOmpMinWork)
    for (int j = 0; j < f; ++j) {
        T acc = T(0);
        for (int i = 0; i < n; ++i) {
            const T* d = dout.data.data() + (std::size_t(i) * f + j) * oh * ow;
            for (int e = 0; e < oh * ow; ++e) acc += d[e];
        }
        db.data[j] = acc;
    }

    // Each thread owns whole dw filters / din samples, so accumulation order
    // is fixed regardless of thread count.
#pragma omp parallel for schedule(static) if (std::int64_t(f) * c * kh * kw * n * oh * ow >= kOmpMinWork)
    for (int j = 0; j < f; ++j) {
        T* dwf = dw.data.data() + std::size_t(j) * c * kh * kw;
        for (int i = 0; i < n; ++i) {
            const T* d = dout.data.data() + (std::size_t(i) * f + j) * oh * ow;
            const T* x = in.data.data() + std::size_t(i) * c * h * wd;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const T dv = d[std::size_t(oy) * ow + ox];
                    for (int ci = 0; ci < c; ++ci) {
                        const T* xc = x + std::size_t(ci) * h * wd;
                        T* dwc = dwf + std::size_t(ci) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const T* xrow = xc + std::size_t(oy + ky) * wd + ox;
                            T* dwrow = dwc + std::size_t(ky) * kw;
                            for (int kx = 0; kx < kw; ++kx) dwrow[kx] += dv * xrow[kx];
                        }
                    }
                }
            }
        }
    }

    if (din) {
        *din = Tensor<T>({n, c, h, wd});
#pragma omp parallel for schedule(static) if (std::int64_t(n) * c * h * wd >= kOmpMinWork)
        for (int i = 0; i < n; ++i) {
            T* dx = din->data.data() + std::size_t(i) * c * h * wd;
            for (int j = 0; j < f; ++j) {
                const T* d = dout.data.data() + (std::size_t(i) * f + j) * oh * ow;
                const T* wf = w.data.data() + std::size_t(j) * c * kh * kw;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const T dv = d[std::size_t(oy) * ow + ox];
                        for (int ci = 0; ci < c; ++ci) {
                            T* dxc = dx + std::size_t(ci) * h * wd;
                            const T* wc = wf + std::size_t(ci) * kh * kw;
                            for (int ky = 0; ky < kh; ++ky) {
                                T* dxrow = dxc + std::size_t(oy + ky) * wd + ox;
                                const T* wrow = wc + std::size_t(ky) * kw;
                                for (int kx = 0; kx < kw; ++kx) dxrow[kx] += dv * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling with a square window; trailing rows/columns
/// that do not fill a window are dropped. argmax records, per output element,
/// the flat index into in.data of the winning input (first occurrence wins).
template <typename T>
void maxpool_forward(const Tensor<T>& in, int window, Tensor<T>& out, std::vector<std::int64_t>& argmax) {
    detail::require(in.rank() == 4, "maxpool: input must be [N,C,H,W]");
    detail::require(window >= 1, "maxpool: window must be positive");
    const int n = in.shape[0], c = in.shape[1], h = in.shape[2], wd = in.shape[3];
    detail::require(h >= window && wd >= window, "maxpool: window larger than input");
    const int oh = h / window, ow = wd / window;
    out = Tensor<T>({n, c, oh, ow});
    argmax.assign(out.size(), 0);

#pragma omp parallel for collapse(2) schedule(static) if (std::int64_t(n) * c * h * wd >= kOmpMinWork)
    for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t in_base = (std::size_t(i) * c + ci) * h * wd;
            const std::size_t out_base = (std::size_t(i) * c + ci) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    std::size_t best_idx = in_base + std::size_t(oy * window) * wd + std::size_t(ox * window);
                    T best = in.data[best_idx];
                    for (int ky = 0; ky < window; ++ky) {
                        for (int kx = 0; kx < window; ++kx) {
                            const std::size_t idx =
                                in_base + std::size_t(oy * window + ky) * wd + std::size_t(ox * window + kx);
                            if (in.data[idx] > best) {
                                best = in.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data[out_base + std::size_t(oy) * ow + ox] = best;
                    argmax[out_base + std::size_t(oy) * ow + ox] = static_cast<std::int64_t>(best_idx);
                }
            }
        }
    }
}

template <typename T>
void maxpool_backward(const Tensor<T>& dout, const std::vector<std::int64_t>& argmax,
                      const std::vector<int>& in_shape, Tensor<T>& din) {
    din = Tensor<T>(in_shape);
    // Pool windows are disjoint, so scatter writes never collide.
#pragma omp parallel for schedule(static) if (std::int64_t(dout.size()) >= kOmpMinWork)
    for (std::int64_t e = 0; e < static_cast<std::int64_t>(dout.size()); ++e) {
        din.data[static_cast<std::size_t>(argmax[e])] += dout.data[e];
    }
}

/// out[n,k] = b[k] + sum_d in[n,d] * w[k,d]
template <typename T>
void dense_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& out) {
    detail::require(in.rank() == 2, "dense: input must be [N,D]");
    const int n = in.shape[0], d = in.shape[1];
    const int k = w.shape[0];
    detail::require(w.rank() == 2 && w.shape[1] == d, "dense: weight shape mismatch");
    detail::require(b.rank() == 1 && b.shape[0] == k, "dense: bias shape mismatch");
    out = Tensor<T>({n, k});

#pragma omp parallel for collapse(2) schedule(static) if (std::int64_t(n) * k * d >= kOmpMinWork)
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            const T* x = in.data.data() + std::size_t(i) * d;
            const T* wr = w.data.data() + std::size_t(j) * d;
            T acc = b.data[j];
            for (int e = 0; e < d; ++e) acc += x[e] * wr[e];
            out.data[std::size_t(i) * k + j] = acc;
        }
    }
}

template <typename T>
void dense_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& dout,
                    Tensor<T>* din, Tensor<T>& dw, Tensor<T>& db) {
    const int n = in.shape[0], d = in.shape[1];
    const int k = w.shape[0];
    detail::require(dout.shape == std::vector<int>({n, k}), "dense_backward: dout shape");
    dw = Tensor<T>({k, d});
    db = Tensor<T>({k});

    // Row ownership keeps the accumulation order fixed for any thread count
    // while streaming over in/w rows.
#pragma omp parallel for schedule(static) if (std::int64_t(k) * d * n >= kOmpMinWork)
    for (int j = 0; j < k; ++j) {
        T* dwr = dw.data.data() + std::size_t(j) * d;
        for (int i = 0; i < n; ++i) {
            const T dv = dout.data[std::size_t(i) * k + j];
            const T* x = in.data.data() + std::size_t(i) * d;
            for (int e = 0; e < d; ++e) dwr[e] += dv * x[e];
        }
    }

#pragma omp parallel for schedule(static) if (std::int64_t(k) * n >= kOmpMinWork)
    for (int j = 0; j < k; ++j) {
        T acc = T(0);
        for (int i = 0; i < n; ++i) acc += dout.data[std::size_t(i) * k + j];
        db.data[j] = acc;
    }

    if (din) {
        *din = Tensor<T>({n, d});
#pragma omp parallel for schedule(static) if (std::int64_t(n) * d * k >= kOmpMinWork)
        for (int i = 0; i < n; ++i) {
            T* dx = din->data.data() + std::size_t(i) * d;
            for (int j = 0; j < k; ++j) {
                const T dv = dout.data[std::size_t(i) * k + j];
                const T* wr = w.data.data() + std::size_t(j) * d;
                for (int e = 0; e < d; ++e) dx[e] += dv * wr[e];
            }
        }
    }
}

template <typename T>
void relu_forward(const Tensor<T>& in, Tensor<T>& out) {
    out = Tensor<T>(in.shape);
#pragma omp parallel for schedule(static) if (std::int64_t(in.size()) >= kOmpMinWork)
    for (std::int64_t e = 0; e < static_cast<std::int64_t>(in.size()); ++e) {
        out.data[e] = in.data[e] > T(0) ? in.data[e] : T(0);
    }
}

template <typename T>
void relu_backward(const Tensor<T>& in, const Tensor<T>& dout, Tensor<T>& din) {
    din = Tensor<T>(in.shape);
#pragma omp parallel for schedule(static) if (std::int64_t(in.size()) >= kOmpMinWork)
    for (std::int64_t e = 0; e < static_cast<std::int64_t>(in.size()); ++e) {
        din.data[e] = in.data[e] > T(0) ? dout.data[e] : T(0);
    }
}

/// Row-wise softmax with max subtraction.
template <typename T>
void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs) {
    detail::require(logits.rank() == 2, "softmax: logits must be [N,K]");
    const int n = logits.shape[0], k = logits.shape[1];
    probs = Tensor<T>({n, k});
#pragma omp parallel for schedule(static) if (std::int64_t(n) * k >= kOmpMinWork)
    for (int i = 0; i < n; ++i) {
        const T* z = logits.data.data() + std::size_t(i) * k;
        T* p = probs.data.data() + std::size_t(i) * k;
        T m = z[0];
        for (int j = 1; j < k; ++j) m = std::max(m, z[j]);
        T sum = T(0);
        for (int j = 0; j < k; ++j) {
            p[j] = std::exp(z[j] - m);
            sum += p[j];
        }
        for (int j = 0; j < k; ++j) p[j] /= sum;
    }
}

/// Multiply channel c of a [N,C,...] tensor by scale[c] in place.
template <typename T>
void scale_channels(Tensor<T>& t, const std::vector<T>& scale) {
    const int n = t.shape[0], c = t.shape[1];
    const std::size_t plane = t.size() / (std::size_t(n) * c);
#pragma omp parallel for collapse(2) schedule(static) if (std::int64_t(t.size()) >= kOmpMinWork)
    for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
            T* p = t.data.data() + (std::size_t(i) * c + ci) * plane;
            const T s = scale[ci];
            for (std::size_t e = 0; e < plane; ++e) p[e] *= s;
        }
    }
}

template <typename T>
void multiply_inplace(Tensor<T>& t, const Tensor<T>& factor) {
    detail::require(t.shape == factor.shape, "multiply: shape mismatch");
#pragma omp parallel for schedule(static) if (std::int64_t(t.size()) >= kOmpMinWork)
    for (std::int64_t e = 0; e < static_cast<std::int64_t>(t.size()); ++e) t.data[e] *= factor.data[e];
}

}  // namespace qbdc::kernels
