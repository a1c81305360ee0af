#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace qbdc {

/// Dense row-major tensor over a scalar type. Shape entries are strictly
/// positive and data.size() always equals the product of the shape.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(checked_numel(shape), T(0));
    }

    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != checked_numel(shape)) {
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape product");
        }
    }

    static std::size_t checked_numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) {
                throw std::invalid_argument("tensor: nonpositive dimension " + std::to_string(d));
            }
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    bool empty() const { return shape.empty(); }
    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= rank()) throw std::out_of_range("tensor: dim index");
        return shape[static_cast<std::size_t>(i)];
    }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    /// View the same data under a different shape (product must match).
    Tensor reshaped(std::vector<int> s) const {
        Tensor r;
        if (checked_numel(s) != data.size()) {
            throw std::invalid_argument("tensor: reshape product mismatch");
        }
        r.shape = std::move(s);
        r.data = data;
        return r;
    }

    bool all_finite() const {
        static_assert(std::is_floating_point_v<T>);
        for (T v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

/// Per-sample shape of a batched tensor (everything after the leading dim).
inline std::vector<int> sample_shape_of(const std::vector<int>& batch_shape) {
    if (batch_shape.empty()) throw std::invalid_argument("tensor: rank-0 batch");
    return std::vector<int>(batch_shape.begin() + 1, batch_shape.end());
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

}  // namespace qbdc
