#include "bdclean/margin.hpp"

#include <limits>
#include <stdexcept>

namespace bdclean::margin {

double LinearModel::score(int c, const std::vector<double>& x) const {
    const double* w = weights.row(c);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
    return s;
}

double LinearModel::sample_margin(const std::vector<double>& x, int y) const {
    double own = score(y, x);
    double best_other = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < num_classes(); ++c) {
        if (c == y) continue;
        best_other = std::max(best_other, score(c, x));
    }
    return own - best_other;
}

LinearModel train_margin_classifier(const std::vector<std::vector<double>>& xs,
                                    const std::vector<int>& ys, int num_classes, double tau,
                                    int max_iters) {
    if (tau <= 0.0) throw std::invalid_argument("margin: tau must be > 0");
    if (xs.empty() || xs.size() != ys.size())
        throw std::invalid_argument("margin: empty or mismatched training data");
    std::size_t dim = xs.front().size();

    LinearModel model;
    model.weights = nn::Mat(static_cast<std::size_t>(num_classes), dim);

    for (int iter = 0; iter < max_iters; ++iter) {
        bool violated = false;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const auto& x = xs[i];
            int y = ys[i];
            double own = model.score(y, x);
            int worst = -1;
            double worst_score = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < num_classes; ++c) {
                if (c == y) continue;
                double sc = model.score(c, x);
                if (sc > worst_score) {
                    worst_score = sc;
                    worst = c;
                }
            }
            if (own - worst_score < tau) {
                violated = true;
                double* wy = model.weights.row(y);
                double* wc = model.weights.row(worst);
                for (std::size_t j = 0; j < dim; ++j) {
                    wy[j] += x[j];
                    wc[j] -= x[j];
                }
            }
        }
        if (!violated) return model;
    }
    throw std::runtime_error("margin: target margin not reached within max_iters");
}

MarginReport verify_affinity(const LinearModel& model, const std::vector<double>& x_s,
                             const std::vector<double>& dx, int s, int t, double tau) {
    MarginReport rep;
    rep.tau = tau;
    std::vector<double> attacked(x_s.size());
    for (std::size_t i = 0; i < x_s.size(); ++i) attacked[i] = x_s[i] + dx[i];
    rep.attack_margin = model.score(t, attacked) - model.score(s, attacked);
    rep.clean_margin = model.score(s, x_s) - model.score(t, x_s);
    rep.affinity_gap = model.score(t, dx) - model.score(s, dx);
    rep.premises_hold = rep.attack_margin >= tau && rep.clean_margin >= tau;
    rep.inequality_holds = !rep.premises_hold || rep.affinity_gap >= 2.0 * tau - 1e-9;
    return rep;
}

}  // namespace bdclean::margin
