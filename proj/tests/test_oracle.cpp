#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

using namespace iql;

namespace {

// Independent oracle: solve (I - gamma*P_pi) v = r_pi by Gaussian
// elimination with partial pivoting.
std::vector<double> linear_solve_values(const TabularMdp& mdp, const TabularPolicy& pi) {
    const int n = mdp.n_states;
    std::vector<std::vector<double>> a(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n + 1), 0.0));
    for (int s = 0; s < n; ++s) {
        for (int s2 = 0; s2 < n; ++s2) {
            double p = 0.0;
            for (int act = 0; act < mdp.n_actions; ++act)
                p += pi.prob(s, act) * mdp.p(s, act, s2);
            a[s][s2] = (s == s2 ? 1.0 : 0.0) - (mdp.is_terminal(s) ? 0.0 : mdp.discount * p);
        }
        double r = 0.0;
        for (int act = 0; act < mdp.n_actions; ++act) r += pi.prob(s, act) * mdp.reward(s, act);
        a[s][n] = mdp.is_terminal(s) ? 0.0 : r;
        if (mdp.is_terminal(s)) {
            for (int s2 = 0; s2 < n; ++s2) a[s][s2] = s == s2 ? 1.0 : 0.0;
        }
    }
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        for (int r = 0; r < n; ++r) {
            if (r == col || a[r][col] == 0.0) continue;
            const double f = a[r][col] / a[col][col];
            for (int c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    for (int s = 0; s < n; ++s) v[static_cast<std::size_t>(s)] = a[s][n] / a[s][s];
    return v;
}

// two states: a0 pays 0, a1 pays 1, both enter the terminal state
TabularMdp two_action_bandit() {
    TabularMdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 2;
    mdp.discount = 0.9;
    mdp.transitions.assign(2 * 2 * 2, 0.0);
    mdp.rewards.assign(2 * 2, 0.0);
    mdp.initial_dist = {1.0, 0.0};
    mdp.terminal = {0, 1};
    for (int a = 0; a < 2; ++a) {
        mdp.p(0, a, 1) = 1.0;
        mdp.p(1, a, 1) = 1.0;
    }
    mdp.reward(0, 1) = 1.0;
    return mdp;
}

TabularPolicy random_supported_uniform(int n_states, int n_actions, Rng& rng) {
    TabularPolicy pi;
    pi.n_states = n_states;
    pi.n_actions = n_actions;
    pi.probs.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    for (int s = 0; s < n_states; ++s) {
        const int k = 2 + uniform_int(rng, n_actions - 1);  // 2..n_actions actions
        std::vector<int> actions(static_cast<std::size_t>(n_actions));
        for (int a = 0; a < n_actions; ++a) actions[static_cast<std::size_t>(a)] = a;
        for (int i = n_actions - 1; i > 0; --i)
            std::swap(actions[static_cast<std::size_t>(i)],
                      actions[static_cast<std::size_t>(uniform_int(rng, i + 1))]);
        for (int i = 0; i < k; ++i) pi.prob(s, actions[static_cast<std::size_t>(i)]) = 1.0 / k;
    }
    return pi;
}

SupportMask support_of(const TabularPolicy& behavior) {
    SupportMask mask = SupportMask::none(behavior.n_states, behavior.n_actions);
    for (int s = 0; s < behavior.n_states; ++s)
        for (int a = 0; a < behavior.n_actions; ++a)
            if (behavior.prob(s, a) > 0.0) mask.set(s, a, true);
    return mask;
}

double constrained_max_q(const QTable& q, const SupportMask& mask, int s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < q.n_actions; ++a)
        if (mask.at(s, a)) best = std::max(best, q.at(s, a));
    return best;
}

}  // namespace

TEST_CASE("value iteration solves the deterministic maze exactly") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    const DpResult res = value_iteration(mdp);
    // six moves to the goal, reward discounted five times
    CHECK(res.value.v[0] == doctest::Approx(10.0 * std::pow(0.9, 5)).epsilon(1e-9));
    CHECK(res.value.v[0] == doctest::Approx(5.9049).epsilon(1e-9));
    CHECK(res.value.v[6] == 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        double best = res.q.at(s, 0);
        for (int a = 1; a < mdp.n_actions; ++a) best = std::max(best, res.q.at(s, a));
        CHECK(res.value.v[static_cast<std::size_t>(s)] == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("value iteration on a single terminal state") {
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.discount = 0.9;
    mdp.transitions = {1.0};
    mdp.rewards = {0.0};
    mdp.initial_dist = {1.0};
    mdp.terminal = {1};
    const DpResult res = value_iteration(mdp);
    CHECK(res.value.v[0] == 0.0);
    CHECK(res.q.at(0, 0) == 0.0);
}

TEST_CASE("value iteration identity holds on random MDPs") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const TabularMdp mdp = make_random_mdp(10, 4, seed);
        const DpResult res = value_iteration(mdp);
        for (int s = 0; s < mdp.n_states; ++s) {
            double best = res.q.at(s, 0);
            for (int a = 1; a < mdp.n_actions; ++a) best = std::max(best, res.q.at(s, a));
            CHECK(res.value.v[static_cast<std::size_t>(s)] ==
                  doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("support value iteration with full support equals value iteration") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const DpResult plain = value_iteration(mdp);
    const DpResult masked =
        support_value_iteration(mdp, SupportMask::full(mdp.n_states, mdp.n_actions));
    for (int s = 0; s < mdp.n_states; ++s)
        CHECK(plain.value.v[static_cast<std::size_t>(s)] ==
              doctest::Approx(masked.value.v[static_cast<std::size_t>(s)]).epsilon(1e-12));
}

TEST_CASE("support constraint forces the inferior action") {
    const TabularMdp mdp = two_action_bandit();
    SupportMask only_a0 = SupportMask::none(2, 2);
    only_a0.set(0, 0, true);
    const DpResult constrained = support_value_iteration(mdp, only_a0);
    const DpResult unconstrained = value_iteration(mdp);
    CHECK(constrained.value.v[0] == doctest::Approx(0.0));
    CHECK(unconstrained.value.v[0] == doctest::Approx(1.0));
    // unsupported entry still reports its one-step lookahead
    CHECK(constrained.q.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("support value iteration rejects infeasible masks") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    SupportMask empty_start = SupportMask::full(mdp.n_states, mdp.n_actions);
    for (int a = 0; a < 4; ++a) empty_start.set(0, a, false);
    CHECK(support_infeasibility(mdp, empty_start).has_value());
    CHECK_THROWS_AS(support_value_iteration(mdp, empty_start), std::invalid_argument);
    CHECK_FALSE(support_infeasibility(mdp, SupportMask::full(7, 4)).has_value());
}

TEST_CASE("restricted support never beats the unconstrained optimum") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    Rng rng = make_rng(99);
    const TabularPolicy behavior = random_supported_uniform(7, 4, rng);
    const DpResult full = value_iteration(mdp);
    const DpResult constrained = support_value_iteration(mdp, support_of(behavior));
    for (int s = 0; s < 7; ++s) {
        CHECK(constrained.value.v[static_cast<std::size_t>(s)] >= -1e-9);
        CHECK(constrained.value.v[static_cast<std::size_t>(s)] <=
              full.value.v[static_cast<std::size_t>(s)] + 1e-9);
    }
}

TEST_CASE("expectile fixed point at tau 0.5 is policy evaluation") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const TabularPolicy uniform = TabularPolicy::uniform(7, 4);
    const DpResult pe = policy_evaluation(mdp, uniform);
    const DpResult efp = expectile_fixed_point(mdp, uniform, Tau(0.5));
    for (int s = 0; s < 7; ++s)
        CHECK(efp.value.v[static_cast<std::size_t>(s)] ==
              doctest::Approx(pe.value.v[static_cast<std::size_t>(s)]).epsilon(1e-8));
    for (int s = 0; s < 7; ++s)
        for (int a = 0; a < 4; ++a)
            CHECK(efp.q.at(s, a) == doctest::Approx(pe.q.at(s, a)).epsilon(1e-8));
}

TEST_CASE("expectile fixed point reduces to the Bernoulli closed form") {
    const TabularMdp mdp = two_action_bandit();
    const TabularPolicy uniform = TabularPolicy::uniform(2, 2);
    for (double tau : {0.3, 0.5, 0.9, 0.99}) {
        const DpResult res = expectile_fixed_point(mdp, uniform, Tau(tau));
        CHECK(res.value.v[0] == doctest::Approx(tau).epsilon(1e-7));
    }
}

TEST_CASE("expectile fixed point approaches the constrained optimum") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TabularMdp mdp = make_random_mdp(10, 4, seed);
        const TabularPolicy uniform = TabularPolicy::uniform(10, 4);
        const DpResult vi = value_iteration(mdp);  // full support
        const DpResult efp = expectile_fixed_point(mdp, uniform, Tau(0.999));
        for (int s = 0; s < 10; ++s) {
            const double v_star = vi.value.v[static_cast<std::size_t>(s)];
            CHECK(std::abs(efp.value.v[static_cast<std::size_t>(s)] - v_star) <=
                  0.01 * std::abs(v_star));
        }
    }
}

TEST_CASE("policy evaluation agrees with a direct linear solve") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const TabularPolicy uniform = TabularPolicy::uniform(7, 4);
    const DpResult pe = policy_evaluation(mdp, uniform);
    const std::vector<double> direct = linear_solve_values(mdp, uniform);
    for (int s = 0; s < 7; ++s)
        CHECK(pe.value.v[static_cast<std::size_t>(s)] ==
              doctest::Approx(direct[static_cast<std::size_t>(s)]).epsilon(1e-8));
}

TEST_CASE("evaluating the optimal policy recovers the optimal values") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    const DpResult vi = value_iteration(mdp);
    const TabularPolicy optimal = greedy_policy(vi.q);
    const DpResult pe = policy_evaluation(mdp, optimal);
    for (int s = 0; s < 7; ++s)
        CHECK(pe.value.v[static_cast<std::size_t>(s)] ==
              doctest::Approx(vi.value.v[static_cast<std::size_t>(s)]).epsilon(1e-8));
}

TEST_CASE("discount zero evaluation returns the immediate rewards") {
    TabularMdp mdp = make_random_mdp(6, 3, 5);
    mdp.discount = 0.0;
    const TabularPolicy uniform = TabularPolicy::uniform(6, 3);
    const DpResult pe = policy_evaluation(mdp, uniform);
    for (int s = 0; s < 6; ++s)
        for (int a = 0; a < 3; ++a)
            CHECK(pe.q.at(s, a) == doctest::Approx(mdp.reward(s, a)).epsilon(1e-12));
}

TEST_CASE("greedy policy argmax, tie-break, and support forcing") {
    QTable q;
    q.n_states = 3;
    q.n_actions = 3;
    q.q = {1.0, 3.0, 2.0,   // argmax 1
           3.0, 3.0, 1.0,   // tie, lowest index
           5.0, 1.0, 0.0};  // support forces action 1
    SupportMask mask = SupportMask::full(3, 3);
    mask.set(2, 0, false);
    mask.set(2, 2, false);
    const TabularPolicy pi = greedy_policy(q, &mask);
    CHECK(pi.prob(0, 1) == 1.0);
    CHECK(pi.prob(1, 0) == 1.0);
    CHECK(pi.prob(2, 1) == 1.0);

    SupportMask infeasible = SupportMask::none(3, 3);
    CHECK_THROWS_AS(greedy_policy(q, &infeasible), std::invalid_argument);
}

TEST_CASE("policy return of reference policies") {
    const TabularMdp maze = make_umaze(0.0, 10.0, 0.9);
    const TabularPolicy optimal = greedy_policy(value_iteration(maze).q);
    CHECK(policy_return(maze, optimal) == doctest::Approx(5.9049).epsilon(1e-9));

    TabularMdp all_terminal;
    all_terminal.n_states = 1;
    all_terminal.n_actions = 2;
    all_terminal.discount = 0.9;
    all_terminal.transitions = {1.0, 1.0};
    all_terminal.rewards = {0.0, 0.0};
    all_terminal.initial_dist = {1.0};
    all_terminal.terminal = {1};
    CHECK(policy_return(all_terminal, TabularPolicy::uniform(1, 2)) == 0.0);

    for (std::uint64_t seed : {7, 8, 9}) {
        const TabularMdp mdp = make_random_mdp(8, 3, seed);
        const TabularPolicy opt = greedy_policy(value_iteration(mdp).q);
        CHECK(policy_return(mdp, opt) >=
              policy_return(mdp, TabularPolicy::uniform(8, 3)) - 1e-9);
    }
}

TEST_CASE("values are monotone in tau") {
    const std::vector<double> taus = {0.5, 0.7, 0.9, 0.99};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TabularMdp mdp = make_random_mdp(10, 4, seed);
        Rng rng = make_rng(seed, 0xbe);
        const TabularPolicy behavior = random_supported_uniform(10, 4, rng);
        std::vector<double> prev;
        for (double tau : taus) {
            const DpResult res = expectile_fixed_point(mdp, behavior, Tau(tau));
            if (!prev.empty())
                for (int s = 0; s < 10; ++s)
                    CHECK(prev[static_cast<std::size_t>(s)] <=
                          res.value.v[static_cast<std::size_t>(s)] + 1e-6);
            prev = res.value.v;
        }
    }
}

TEST_CASE("values never exceed the support-constrained optimum") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TabularMdp mdp = make_random_mdp(10, 4, seed);
        Rng rng = make_rng(seed, 0xca);
        const TabularPolicy behavior = random_supported_uniform(10, 4, rng);
        const SupportMask mask = support_of(behavior);
        const DpResult constrained = support_value_iteration(mdp, mask);
        for (double tau : {0.5, 0.7, 0.9, 0.99, 0.999}) {
            const DpResult efp = expectile_fixed_point(mdp, behavior, Tau(tau));
            for (int s = 0; s < 10; ++s)
                CHECK(efp.value.v[static_cast<std::size_t>(s)] <=
                      constrained_max_q(constrained.q, mask, s) + 1e-6);
        }
    }
}

TEST_CASE("iterates contract geometrically") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    for (const DpResult& res :
         {value_iteration(mdp), policy_evaluation(mdp, TabularPolicy::uniform(7, 4))}) {
        for (std::size_t k = 1; k + 1 < res.sup_changes.size(); ++k) {
            if (res.sup_changes[k] < 1e-12) break;
            CHECK(res.sup_changes[k + 1] <= mdp.discount * res.sup_changes[k] + 1e-12);
        }
    }
}
