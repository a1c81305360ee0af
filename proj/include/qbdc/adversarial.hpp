#pragma once

#include <string>
#include <vector>

#include "qbdc/data_io.hpp"
#include "qbdc/nn.hpp"

namespace qbdc::adv {

struct FgsmParams {
    double epsilon = 0.1;   // max-norm perturbation budget
    double clamp_lo = 0.0;  // valid input range after perturbation
    double clamp_hi = 1.0;
};

struct AdversarialRow {
    double epsilon = 0.0;
    long probed = 0;
    long flipped = 0;  // correct before, wrong after
    double flip_rate = 0.0;
};

struct AdversarialReport {
    std::vector<AdversarialRow> rows;
};

/// Fast gradient sign perturbation of one sample:
/// x_adv = clamp(x + eps * sign(grad_x J(theta, x, y))), with sign(0) = 0.
Tensor<float> fgsm_perturb(const nn::Network<float>& net, const Tensor<float>& x, int y, const FgsmParams& params);

/// For each epsilon, counts probe samples that are classified correctly
/// unperturbed but misclassified after the FGSM perturbation.
AdversarialReport count_adversarials(const nn::Network<float>& net, const data::Subset& probe,
                                     const std::vector<double>& eps_grid, const FgsmParams& params);

}  // namespace qbdc::adv
