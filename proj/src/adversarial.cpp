#include "qbdc/adversarial.hpp"

#include <algorithm>
#include <stdexcept>

namespace qbdc::adv {

namespace {

float sign_of(float g) { return g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f); }

void check_params(const FgsmParams& p) {
    if (p.epsilon < 0.0) throw std::invalid_argument("fgsm: epsilon must be >= 0");
    if (!(p.clamp_lo < p.clamp_hi)) throw std::invalid_argument("fgsm: clamp range is empty");
}

// Per-sample input-gradient signs for a batch; the batch-mean scaling of the
// loss never changes a sign.
Tensor<float> grad_signs(const nn::Network<float>& net, const Tensor<float>& x, const std::vector<int>& y) {
    nn::ForwardTrace<float> trace = nn::forward(net, x);
    nn::Gradients<float> grads = nn::backward(net, trace, y, /*want_input_grad=*/true);
    Tensor<float> s(grads.input.shape);
    for (std::size_t e = 0; e < s.size(); ++e) s.data[e] = sign_of(grads.input.data[e]);
    return s;
}

Tensor<float> perturb(const Tensor<float>& x, const Tensor<float>& signs, const FgsmParams& p) {
    Tensor<float> out(x.shape);
    const float eps = static_cast<float>(p.epsilon);
    const float lo = static_cast<float>(p.clamp_lo), hi = static_cast<float>(p.clamp_hi);
    for (std::size_t e = 0; e < x.size(); ++e) {
        out.data[e] = std::min(std::max(x.data[e] + eps * signs.data[e], lo), hi);
    }
    return out;
}

}  // namespace

Tensor<float> fgsm_perturb(const nn::Network<float>& net, const Tensor<float>& x, int y, const FgsmParams& params) {
    check_params(params);
    for (float v : x.data) {
        if (v < params.clamp_lo || v > params.clamp_hi) {
            throw std::invalid_argument("fgsm: input outside the clamp range");
        }
    }
    std::vector<int> batch_shape = x.shape;
    batch_shape.insert(batch_shape.begin(), 1);
    const Tensor<float> xb = x.reshaped(batch_shape);
    const Tensor<float> signs = grad_signs(net, xb, {y});
    return perturb(xb, signs, params).reshaped(x.shape);
}

AdversarialReport count_adversarials(const nn::Network<float>& net, const data::Subset& probe,
                                     const std::vector<double>& eps_grid, const FgsmParams& params) {
    check_params(params);
    if (probe.size() == 0) throw std::invalid_argument("count_adversarials: empty probe set");

    AdversarialReport report;
    report.rows.resize(eps_grid.size());
    for (std::size_t g = 0; g < eps_grid.size(); ++g) {
        if (eps_grid[g] < 0.0) throw std::invalid_argument("count_adversarials: negative epsilon");
        report.rows[g].epsilon = eps_grid[g];
        report.rows[g].probed = probe.size();
    }

    const int chunk = 256;
    for (int at = 0; at < probe.size(); at += chunk) {
        const int n = std::min(chunk, probe.size() - at);
        Tensor<float> x = data::gather_images<float>(*probe.ds, probe.indices.data() + at, n);
        std::vector<int> y(probe.labels.begin() + at, probe.labels.begin() + at + n);

        const std::vector<int> clean_pred = nn::predict(net, x);
        const Tensor<float> signs = grad_signs(net, x, y);

        for (std::size_t g = 0; g < eps_grid.size(); ++g) {
            FgsmParams p = params;
            p.epsilon = eps_grid[g];
            const Tensor<float> x_adv = perturb(x, signs, p);
            const std::vector<int> adv_pred = nn::predict(net, x_adv);
            long flips = 0;
            for (int i = 0; i < n; ++i) {
                const std::size_t ii = static_cast<std::size_t>(i);
                if (clean_pred[ii] == y[ii] && adv_pred[ii] != y[ii]) ++flips;
            }
            report.rows[g].flipped += flips;
        }
    }

    for (auto& row : report.rows) {
        row.flip_rate = static_cast<double>(row.flipped) / static_cast<double>(row.probed);
    }
    return report;
}

}  // namespace qbdc::adv
