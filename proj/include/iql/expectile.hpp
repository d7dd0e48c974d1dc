#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "iql/approx.hpp"
#include "iql/rng.hpp"

namespace iql {

/// Expectile level, constrained to the open interval (0,1). 0.5 is the
/// mean; levels near 1 approach the supremum of the support.
class Tau {
public:
    explicit Tau(double value) : value_(value) {
        if (!(value > 0.0 && value < 1.0))
            throw std::invalid_argument("tau must lie in the open interval (0,1)");
    }
    double value() const { return value_; }

private:
    double value_;
};

/// Sample with an explicit probability mass, so exact (oracle) expectiles
/// and empirical ones share one code path.
struct WeightedSample {
    double value;
    double weight;
};

/// Asymmetric squared loss: tau*u^2 for u >= 0, (1-tau)*u^2 otherwise.
double asym_l2_loss(double u, Tau tau);

/// Derivative of asym_l2_loss in u; 0 at u = 0.
double asym_l2_grad(double u, Tau tau);

/// Asymmetric absolute (quantile) loss: tau*u for u >= 0, (1-tau)*(-u) otherwise.
double asym_l1_loss(double u, Tau tau);

/// Derivative of asym_l1_loss in u; 0 at u = 0.
double asym_l1_grad(double u, Tau tau);

/// The tau-expectile of a weighted discrete distribution, found by bisecting
/// the first-order condition tau*E[(X-m)+] = (1-tau)*E[(m-X)+] over
/// [min, max] of the positive-weight support. Stops once the normalized
/// condition residual is within tol.
double scalar_expectile(std::span<const WeightedSample> samples, Tau tau, double tol = 1e-10);

struct LabeledExample {
    ApproxInput input;
    double target;
};

/// Stochastic gradient descent on E[L2_tau(y - m(x))]. Plain SGD with small
/// uniformly-sampled minibatches; throws DivergenceError on non-finite loss.
Approximator fit_conditional_expectile(std::span<const LabeledExample> pairs, Tau tau,
                                       Approximator model, long steps, double lr, Rng& rng);

}  // namespace iql
