#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iql/expectile.hpp"
#include "iql/mdp.hpp"

namespace iql {

/// State values; zero at terminal states.
struct ValueTable {
    std::vector<double> v;
};

/// State-action values; zero rows at terminal states.
struct QTable {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> q;

    double at(int s, int a) const { return q[static_cast<std::size_t>(s) * n_actions + a]; }
    double& at(int s, int a) { return q[static_cast<std::size_t>(s) * n_actions + a]; }
};

/// Which (s,a) pairs carry positive behavior probability. Feasibility
/// (every reachable non-terminal state keeps at least one action) is checked
/// against an MDP by support_infeasibility.
struct SupportMask {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::uint8_t> mask;

    bool at(int s, int a) const {
        return mask[static_cast<std::size_t>(s) * n_actions + a] != 0;
    }
    void set(int s, int a, bool value) {
        mask[static_cast<std::size_t>(s) * n_actions + a] = value ? 1 : 0;
    }
    bool state_has_support(int s) const {
        for (int a = 0; a < n_actions; ++a)
            if (at(s, a)) return true;
        return false;
    }

    static SupportMask full(int n_states, int n_actions) {
        SupportMask m;
        m.n_states = n_states;
        m.n_actions = n_actions;
        m.mask.assign(static_cast<std::size_t>(n_states) * n_actions, 1);
        return m;
    }
    static SupportMask none(int n_states, int n_actions) {
        SupportMask m = full(n_states, n_actions);
        std::fill(m.mask.begin(), m.mask.end(), 0);
        return m;
    }
};

/// Solver output. sup_changes records the sup-norm change per sweep, which
/// tests use to confirm geometric contraction.
struct DpResult {
    ValueTable value;
    QTable q;
    std::vector<double> sup_changes;
};

/// Optimal values by synchronous Q-iteration with the max backup; stops when
/// the sup-norm change drops below tol*(1-gamma)/gamma.
DpResult value_iteration(const TabularMdp& mdp, double tol = 1e-10);

/// Optimal values with the per-state max restricted to supported actions.
/// Q is still reported for unsupported pairs (one-step lookahead into the
/// constrained V); V never uses them. States with no supported action keep
/// V = 0 and must be unreachable (see support_infeasibility).
DpResult support_value_iteration(const TabularMdp& mdp, const SupportMask& support,
                                 double tol = 1e-10);

/// The coupled expectile recursion: V(s) is the tau-expectile of Q(s,.)
/// under the behavior row, Q(s,a) = r + gamma*E[V(s')]. Synchronous sweeps,
/// stopping at sup-norm change < tol; iteration cap 10^6.
DpResult expectile_fixed_point(const TabularMdp& mdp, const TabularPolicy& behavior, Tau tau,
                               double tol = 1e-10);

/// Exact Q^pi by iterating Q = r + gamma*P*(policy-averaged Q);
/// V(s) = sum_a pi(a|s) Q(s,a).
DpResult policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy,
                           double tol = 1e-10);

/// Point mass on the argmax (over supported actions when a mask is given);
/// ties break to the lowest action index. A state whose support row is all
/// false is an infeasible input.
TabularPolicy greedy_policy(const QTable& q, const SupportMask* support = nullptr);

/// J(pi) = sum_s p0(s) V^pi(s), computed exactly via policy_evaluation.
double policy_return(const TabularMdp& mdp, const TabularPolicy& policy);

/// Reachability check: nullopt if every non-terminal state reachable from
/// the initial distribution under supported actions has at least one
/// supported action, else a description of the first offending state.
std::optional<std::string> support_infeasibility(const TabularMdp& mdp,
                                                 const SupportMask& support);

/// (J - J_uniform) / (J_best - J_uniform); the scale-free policy-quality
/// metric used for maze experiments.
double normalized_return(double j, double j_uniform, double j_best);

}  // namespace iql
