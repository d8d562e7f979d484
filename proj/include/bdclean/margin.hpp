#pragma once

#include <cstdint>
#include <vector>

#include "bdclean/nn.hpp"

namespace bdclean::margin {

// One weight vector per class over flattened inputs; discriminant is the
// inner product.
struct LinearModel {
    nn::Mat weights;  // [C, D]
    int num_classes() const { return static_cast<int>(weights.rows); }
    double score(int c, const std::vector<double>& x) const;
    // margin of x under label y: f_y(x) - max_{c != y} f_c(x)
    double sample_margin(const std::vector<double>& x, int y) const;
};

// Margin-perceptron training: on a violated margin, w_y += x and w_c -= x
// for the strongest competitor. Throws if the target margin is not reached
// within max_iters sweeps.
LinearModel train_margin_classifier(const std::vector<std::vector<double>>& xs,
                                    const std::vector<int>& ys, int num_classes, double tau,
                                    int max_iters);

struct MarginReport {
    double tau = 0.0;
    double attack_margin = 0.0;    // (w_t - w_s) . (x_s + dx)
    double clean_margin = 0.0;     // (w_s - w_t) . x_s
    double affinity_gap = 0.0;     // (w_t - w_s) . dx
    bool premises_hold = false;    // both margins >= tau
    bool inequality_holds = false; // gap >= 2 tau - 1e-9 whenever premises hold
};

// Checks the two margin premises on (x_s, x_s + dx) and, when both hold,
// asserts the affinity gap bound (their algebraic sum).
MarginReport verify_affinity(const LinearModel& model, const std::vector<double>& x_s,
                             const std::vector<double>& dx, int s, int t, double tau);

}  // namespace bdclean::margin
