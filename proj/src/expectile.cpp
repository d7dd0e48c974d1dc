#include "iql/expectile.hpp"

#include <algorithm>
#include <cmath>

#include "iql/errors.hpp"

namespace iql {

double asym_l2_loss(double u, Tau tau) {
    const double w = u >= 0.0 ? tau.value() : 1.0 - tau.value();
    return w * u * u;
}

double asym_l2_grad(double u, Tau tau) {
    if (u == 0.0) return 0.0;
    const double w = u > 0.0 ? tau.value() : 1.0 - tau.value();
    return 2.0 * w * u;
}

double asym_l1_loss(double u, Tau tau) {
    return u >= 0.0 ? tau.value() * u : (1.0 - tau.value()) * (-u);
}

double asym_l1_grad(double u, Tau tau) {
    if (u == 0.0) return 0.0;
    return u > 0.0 ? tau.value() : -(1.0 - tau.value());
}

double scalar_expectile(std::span<const WeightedSample> samples, Tau tau, double tol) {
    if (samples.empty()) throw std::invalid_argument("scalar_expectile: empty sample set");
    if (!(tol > 0.0)) throw std::invalid_argument("scalar_expectile: tol must be positive");

    double total_weight = 0.0;
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const WeightedSample& s : samples) {
        if (!(s.weight >= 0.0))
            throw std::invalid_argument("scalar_expectile: negative or non-finite weight");
        if (!std::isfinite(s.value))
            throw std::invalid_argument("scalar_expectile: non-finite sample value");
        if (s.weight == 0.0) continue;
        if (!any) {
            lo = hi = s.value;
            any = true;
        } else {
            lo = std::min(lo, s.value);
            hi = std::max(hi, s.value);
        }
        total_weight += s.weight;
    }
    if (!any) throw std::invalid_argument("scalar_expectile: total weight is zero");
    if (lo == hi) return lo;

    // Normalized first-order condition; continuous, strictly decreasing in m,
    // positive at lo and negative at hi.
    const auto condition = [&](double m) {
        double pos = 0.0, neg = 0.0;
        for (const WeightedSample& s : samples) {
            if (s.weight == 0.0) continue;
            const double d = s.value - m;
            if (d > 0.0)
                pos += s.weight * d;
            else
                neg += s.weight * (-d);
        }
        return (tau.value() * pos - (1.0 - tau.value()) * neg) / total_weight;
    };

    double mid = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        const double g = condition(mid);
        if (std::abs(g) <= tol) return mid;
        if (g > 0.0)
            lo = mid;
        else
            hi = mid;
        mid = 0.5 * (lo + hi);
        // |condition| <= interval width, so this also certifies the residual
        if (hi - lo <= tol) return mid;
    }
    return mid;
}

Approximator fit_conditional_expectile(std::span<const LabeledExample> pairs, Tau tau,
                                       Approximator model, long steps, double lr, Rng& rng) {
    if (pairs.empty()) throw std::invalid_argument("fit_conditional_expectile: no pairs");
    if (steps < 1) throw std::invalid_argument("fit_conditional_expectile: steps must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("fit_conditional_expectile: lr must be positive");
    if (model.shape.n_outputs != 1)
        throw std::invalid_argument("fit_conditional_expectile: model must be scalar-valued");

    const int batch = static_cast<int>(std::min<std::size_t>(pairs.size(), 32));
    std::vector<double> g(model.params.size(), 0.0);
    for (long t = 0; t < steps; ++t) {
        std::fill(g.begin(), g.end(), 0.0);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            const LabeledExample& ex = pairs[static_cast<std::size_t>(
                uniform_int(rng, static_cast<int>(pairs.size())))];
            const double u = ex.target - eval(model, ex.input)[0];
            loss += asym_l2_loss(u, tau) / batch;
            const double cot = -asym_l2_grad(u, tau) / batch;
            grad_accumulate(model, ex.input, std::span<const double>(&cot, 1), 1.0, g);
        }
        if (!std::isfinite(loss)) throw DivergenceError(t, "conditional expectile loss");
        for (std::size_t i = 0; i < model.params.size(); ++i) model.params[i] -= lr * g[i];
    }
    return model;
}

}  // namespace iql
