#include "iql/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "iql/errors.hpp"

namespace iql {

namespace {

constexpr long kMaxSweeps = 1000000;

void check_policy(const TabularMdp& mdp, const TabularPolicy& policy, const char* where) {
    if (policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions)
        throw std::invalid_argument(std::string(where) + ": policy shape mismatch");
    for (int s = 0; s < policy.n_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < policy.n_actions; ++a) {
            const double p = policy.prob(s, a);
            if (!(p >= 0.0))
                throw std::invalid_argument(std::string(where) + ": negative policy probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument(std::string(where) + ": policy row " + std::to_string(s) +
                                        " is not normalized");
    }
}

double expected_next_value(const TabularMdp& mdp, int s, int a, const std::vector<double>& v) {
    const std::span<const double> row = mdp.row(s, a);
    double acc = 0.0;
    for (int s2 = 0; s2 < mdp.n_states; ++s2) acc += row[static_cast<std::size_t>(s2)] * v[static_cast<std::size_t>(s2)];
    return acc;
}

double stop_threshold(const TabularMdp& mdp, double tol) {
    return mdp.discount > 0.0 ? tol * (1.0 - mdp.discount) / mdp.discount : tol;
}

}  // namespace

DpResult value_iteration(const TabularMdp& mdp, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
    return support_value_iteration(mdp, SupportMask::full(mdp.n_states, mdp.n_actions), tol);
}

DpResult support_value_iteration(const TabularMdp& mdp, const SupportMask& support, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("support_value_iteration: tol must be positive");
    if (support.n_states != mdp.n_states || support.n_actions != mdp.n_actions)
        throw std::invalid_argument("support_value_iteration: mask shape mismatch");
    if (const auto why = support_infeasibility(mdp, support))
        throw std::invalid_argument("support_value_iteration: infeasible support: " + *why);

    DpResult res;
    res.value.v.assign(static_cast<std::size_t>(mdp.n_states), 0.0);
    res.q.n_states = mdp.n_states;
    res.q.n_actions = mdp.n_actions;
    res.q.q.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);

    const double threshold = stop_threshold(mdp, tol);
    std::vector<double> v_next(res.value.v.size(), 0.0);
    for (long sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double change = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            if (mdp.is_terminal(s)) {
                v_next[static_cast<std::size_t>(s)] = 0.0;
                continue;
            }
            double best = 0.0;
            bool has_any = false;
            for (int a = 0; a < mdp.n_actions; ++a) {
                const double q = mdp.reward(s, a) +
                                 mdp.discount * expected_next_value(mdp, s, a, res.value.v);
                res.q.at(s, a) = q;
                if (support.at(s, a) && (!has_any || q > best)) {
                    best = q;
                    has_any = true;
                }
            }
            // no supported action: unreachable by feasibility, value pinned to 0
            v_next[static_cast<std::size_t>(s)] = has_any ? best : 0.0;
            change = std::max(change, std::abs(v_next[static_cast<std::size_t>(s)] -
                                               res.value.v[static_cast<std::size_t>(s)]));
        }
        res.value.v = v_next;
        res.sup_changes.push_back(change);
        if (change < threshold) return res;
    }
    throw DivergenceError(kMaxSweeps, "value iteration did not converge");
}

DpResult expectile_fixed_point(const TabularMdp& mdp, const TabularPolicy& behavior, Tau tau,
                               double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("expectile_fixed_point: tol must be positive");
    check_policy(mdp, behavior, "expectile_fixed_point");

    DpResult res;
    res.value.v.assign(static_cast<std::size_t>(mdp.n_states), 0.0);
    res.q.n_states = mdp.n_states;
    res.q.n_actions = mdp.n_actions;
    res.q.q.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);

    // The inner bisection must be tighter than the outer stopping rule.
    const double inner_tol = std::min(1e-13, tol * 1e-3);
    std::vector<WeightedSample> row;
    std::vector<double> v_next(res.value.v.size(), 0.0);
    for (long sweep = 0; sweep < kMaxSweeps; ++sweep) {
        for (int s = 0; s < mdp.n_states; ++s)
            for (int a = 0; a < mdp.n_actions; ++a)
                res.q.at(s, a) = mdp.is_terminal(s)
                                     ? 0.0
                                     : mdp.reward(s, a) + mdp.discount *
                                           expected_next_value(mdp, s, a, res.value.v);
        double change = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            if (mdp.is_terminal(s)) {
                v_next[static_cast<std::size_t>(s)] = 0.0;
                continue;
            }
            row.clear();
            for (int a = 0; a < mdp.n_actions; ++a)
                if (behavior.prob(s, a) > 0.0)
                    row.push_back({res.q.at(s, a), behavior.prob(s, a)});
            v_next[static_cast<std::size_t>(s)] = scalar_expectile(row, tau, inner_tol);
            change = std::max(change, std::abs(v_next[static_cast<std::size_t>(s)] -
                                               res.value.v[static_cast<std::size_t>(s)]));
        }
        res.value.v = v_next;
        res.sup_changes.push_back(change);
        if (change < tol) return res;
    }
    throw DivergenceError(kMaxSweeps, "expectile fixed point did not converge");
}

DpResult policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("policy_evaluation: tol must be positive");
    check_policy(mdp, policy, "policy_evaluation");

    DpResult res;
    res.value.v.assign(static_cast<std::size_t>(mdp.n_states), 0.0);
    res.q.n_states = mdp.n_states;
    res.q.n_actions = mdp.n_actions;
    res.q.q.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);

    const double threshold = stop_threshold(mdp, tol);
    std::vector<double> v_next(res.value.v.size(), 0.0);
    for (long sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double change = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            if (mdp.is_terminal(s)) {
                v_next[static_cast<std::size_t>(s)] = 0.0;
                continue;
            }
            double v = 0.0;
            for (int a = 0; a < mdp.n_actions; ++a) {
                const double q = mdp.reward(s, a) +
                                 mdp.discount * expected_next_value(mdp, s, a, res.value.v);
                res.q.at(s, a) = q;
                v += policy.prob(s, a) * q;
            }
            v_next[static_cast<std::size_t>(s)] = v;
            change = std::max(change, std::abs(v - res.value.v[static_cast<std::size_t>(s)]));
        }
        res.value.v = v_next;
        res.sup_changes.push_back(change);
        if (change < threshold) return res;
    }
    throw DivergenceError(kMaxSweeps, "policy evaluation did not converge");
}

TabularPolicy greedy_policy(const QTable& q, const SupportMask* support) {
    if (support && (support->n_states != q.n_states || support->n_actions != q.n_actions))
        throw std::invalid_argument("greedy_policy: mask shape mismatch");
    TabularPolicy pi;
    pi.n_states = q.n_states;
    pi.n_actions = q.n_actions;
    pi.probs.assign(static_cast<std::size_t>(q.n_states) * q.n_actions, 0.0);
    for (int s = 0; s < q.n_states; ++s) {
        int best = -1;
        for (int a = 0; a < q.n_actions; ++a) {
            if (support && !support->at(s, a)) continue;
            if (best < 0 || q.at(s, a) > q.at(s, best)) best = a;
        }
        if (best < 0)
            throw std::invalid_argument("greedy_policy: state " + std::to_string(s) +
                                        " has no supported action");
        pi.prob(s, best) = 1.0;
    }
    return pi;
}

double policy_return(const TabularMdp& mdp, const TabularPolicy& policy) {
    const DpResult res = policy_evaluation(mdp, policy);
    double j = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
        j += mdp.initial_dist[static_cast<std::size_t>(s)] * res.value.v[static_cast<std::size_t>(s)];
    return j;
}

std::optional<std::string> support_infeasibility(const TabularMdp& mdp,
                                                 const SupportMask& support) {
    if (support.n_states != mdp.n_states || support.n_actions != mdp.n_actions)
        return "mask shape mismatch";
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(mdp.n_states), 0);
    std::deque<int> frontier;
    for (int s = 0; s < mdp.n_states; ++s) {
        if (mdp.initial_dist[static_cast<std::size_t>(s)] > 0.0) {
            seen[static_cast<std::size_t>(s)] = 1;
            frontier.push_back(s);
        }
    }
    while (!frontier.empty()) {
        const int s = frontier.front();
        frontier.pop_front();
        if (mdp.is_terminal(s)) continue;
        if (!support.state_has_support(s))
            return "reachable non-terminal state " + std::to_string(s) +
                   " has no supported action";
        for (int a = 0; a < mdp.n_actions; ++a) {
            if (!support.at(s, a)) continue;
            const std::span<const double> row = mdp.row(s, a);
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                if (row[static_cast<std::size_t>(s2)] > 0.0 && !seen[static_cast<std::size_t>(s2)]) {
                    seen[static_cast<std::size_t>(s2)] = 1;
                    frontier.push_back(s2);
                }
            }
        }
    }
    return std::nullopt;
}

double normalized_return(double j, double j_uniform, double j_best) {
    const double denom = j_best - j_uniform;
    if (std::abs(denom) < 1e-12)
        throw std::invalid_argument("normalized_return: degenerate reference interval");
    return (j - j_uniform) / denom;
}

}  // namespace iql
