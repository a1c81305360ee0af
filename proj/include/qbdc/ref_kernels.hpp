#pragma once

#include <vector>

#include "qbdc/nn.hpp"
#include "qbdc/tensor.hpp"

// Serial reference implementations, double precision only. Written as plain
// nested loops with no blocking or pointer arithmetic; kept for testing the
// OpenMP kernels and as the baseline of the kernel benchmark. Not linked
// into the production library.

namespace qbdc::ref {

Tensor<double> conv2d_forward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b);

struct ConvGrads {
    Tensor<double> din, dw, db;
};
ConvGrads conv2d_backward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& dout);

Tensor<double> maxpool_forward(const Tensor<double>& in, int window);
Tensor<double> maxpool_backward(const Tensor<double>& in, const Tensor<double>& dout, int window);

Tensor<double> dense_forward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b);

struct DenseGrads {
    Tensor<double> din, dw, db;
};
DenseGrads dense_backward(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& dout);

Tensor<double> relu_forward(const Tensor<double>& in);
Tensor<double> softmax_rows(const Tensor<double>& logits);

/// Direct cross-entropy evaluation in extended precision, no max subtraction.
long double cross_entropy_direct(const Tensor<double>& logits, const std::vector<int>& targets);

/// Straightforward whole-network forward pass (optionally masked) walking the
/// same layer stack with naive loops; returns the pre-softmax activations.
Tensor<double> forward_logits(const nn::Network<double>& net, const Tensor<double>& batch,
                              const nn::DropoutMask* mask = nullptr);

}  // namespace qbdc::ref
