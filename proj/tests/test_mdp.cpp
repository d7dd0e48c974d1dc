#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

using namespace iql;

namespace {

// Independent re-derivation of the maze geometry: cell coordinates in
// corridor order, deterministic moves with wall/edge bumps.
constexpr std::array<std::pair<int, int>, 7> kCells = {
    std::pair{0, 0}, {0, 1}, {0, 2}, {1, 2}, {2, 2}, {2, 1}, {2, 0}};

int cell_at(int col, int row) {
    for (int i = 0; i < 7; ++i)
        if (kCells[static_cast<std::size_t>(i)] == std::pair{col, row}) return i;
    return -1;
}

int oracle_move(int s, int a) {
    auto [col, row] = kCells[static_cast<std::size_t>(s)];
    if (a == 0) row += 1;
    if (a == 1) row -= 1;
    if (a == 2) col -= 1;
    if (a == 3) col += 1;
    if (col < 0 || col > 2 || row < 0 || row > 2) return s;
    const int idx = cell_at(col, row);
    return idx < 0 ? s : idx;
}

// actions: 0=up 1=down 2=left 3=right; shortest route is 6 moves
constexpr std::array<int, 6> kOptimalRoute = {0, 0, 3, 3, 1, 1};

TabularPolicy optimal_route_policy() {
    TabularPolicy pi = TabularPolicy::uniform(7, 4);
    std::fill(pi.probs.begin(), pi.probs.end(), 0.0);
    for (int s = 0; s < 6; ++s) pi.prob(s, kOptimalRoute[static_cast<std::size_t>(s)]) = 1.0;
    pi.prob(6, 0) = 1.0;  // goal row, never used
    return pi;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("umaze shape and validation") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    CHECK(mdp.n_states == 7);
    CHECK(mdp.n_actions == 4);
    CHECK(validate(mdp).empty());
    CHECK(mdp.initial_dist[0] == 1.0);
    CHECK(mdp.is_terminal(6));
    CHECK_FALSE(mdp.grid.empty());

    // reward only on pairs that can enter the goal
    for (int s = 0; s < 7; ++s) {
        for (int a = 0; a < 4; ++a) {
            const double expected = s == 6 ? 0.0 : 10.0 * mdp.p(s, a, 6);
            CHECK(mdp.reward(s, a) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
    // only the two goal-adjacent states can reach it in one move
    for (int s = 0; s < 6; ++s)
        for (int a = 0; a < 4; ++a)
            if (mdp.p(s, a, 6) > 0.0) CHECK((s == 5 || s == 6));
}

TEST_CASE("umaze deterministic rows at zero noise") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    CHECK(validate(mdp).empty());
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            int ones = 0;
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                const double p = mdp.p(s, a, s2);
                CHECK((p == 0.0 || p == 1.0));
                if (p == 1.0) ++ones;
            }
            CHECK(ones == 1);
            if (!mdp.is_terminal(s)) CHECK(mdp.p(s, a, oracle_move(s, a)) == 1.0);
        }
    }
}

TEST_CASE("umaze noisy rows match enumeration of random-action outcomes") {
    const double eps = 0.25;
    const TabularMdp mdp = make_umaze(eps, 10.0, 0.9);
    for (int s = 0; s < 6; ++s) {
        for (int a = 0; a < 4; ++a) {
            std::array<double, 7> expected{};
            expected[static_cast<std::size_t>(oracle_move(s, a))] += 1.0 - eps;
            for (int b = 0; b < 4; ++b)
                expected[static_cast<std::size_t>(oracle_move(s, b))] += eps / 4.0;
            for (int s2 = 0; s2 < 7; ++s2)
                CHECK(mdp.p(s, a, s2) ==
                      doctest::Approx(expected[static_cast<std::size_t>(s2)]).epsilon(1e-12));
        }
    }
    // start state, commanded "right" is blocked; 3 of 4 random actions also stay
    CHECK(mdp.p(0, 3, 0) == doctest::Approx(0.75 + 0.25 * 3.0 / 4.0));
}

TEST_CASE("umaze random_state noise spreads over all states") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9, NoiseMode::RandomState);
    CHECK(validate(mdp).empty());
    // commanded up from start: (1-eps) on (0,1) plus eps/7 everywhere
    CHECK(mdp.p(0, 0, 1) == doctest::Approx(0.75 + 0.25 / 7.0));
    for (int s2 = 0; s2 < 7; ++s2)
        if (s2 != 1) CHECK(mdp.p(0, 0, s2) == doctest::Approx(0.25 / 7.0));
}

TEST_CASE("umaze rejects bad parameters") {
    CHECK_THROWS_AS(make_umaze(1.0, 10.0, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(make_umaze(-0.1, 10.0, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(make_umaze(0.25, 10.0, 1.0), std::invalid_argument);
}

TEST_CASE("random mdp determinism and seed sensitivity") {
    const TabularMdp a = make_random_mdp(10, 4, 1);
    const TabularMdp b = make_random_mdp(10, 4, 1);
    const TabularMdp c = make_random_mdp(10, 4, 2);
    CHECK(a == b);
    CHECK(a.transitions != c.transitions);
    CHECK(validate(a).empty());
    CHECK(validate(c).empty());
    CHECK_THROWS_AS(make_random_mdp(1, 4, 1), std::invalid_argument);
}

TEST_CASE("validate reports constructed defects") {
    TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    mdp.p(2, 1, 1) -= 0.1;  // row now sums to 0.9
    const auto violations = validate(mdp);
    REQUIRE_FALSE(violations.empty());
    bool names_pair = false;
    for (const auto& v : violations)
        if (v.find("s=2") != std::string::npos && v.find("a=1") != std::string::npos)
            names_pair = true;
    CHECK(names_pair);

    TabularMdp neg = make_umaze(0.0, 10.0, 0.9);
    neg.p(1, 0, 2) = -0.25;
    bool names_entry = false;
    for (const auto& v : validate(neg))
        if (v.find("negative") != std::string::npos) names_entry = true;
    CHECK(names_entry);
}

TEST_CASE("step follows deterministic rows and terminal convention") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    Rng rng = make_rng(7);
    const StepResult up = step(mdp, 0, 0, rng);
    CHECK(up.next_state == 1);
    CHECK(up.reward == 0.0);
    CHECK_FALSE(up.done);

    const StepResult goal = step(mdp, 5, 1, rng);
    CHECK(goal.next_state == 6);
    CHECK(goal.reward == 10.0);
    CHECK(goal.done);

    CHECK_THROWS_AS(step(mdp, 6, 0, rng), std::invalid_argument);
}

TEST_CASE("step sampling frequencies match the stored row") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    Rng rng = make_rng(123);
    const int n = 100000;
    std::array<int, 7> counts{};
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(step(mdp, 5, 1, rng).next_state)]++;
    for (int s2 = 0; s2 < 7; ++s2) {
        const double p = mdp.p(5, 1, s2);
        const double freq = static_cast<double>(counts[static_cast<std::size_t>(s2)]) / n;
        const double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / n);
        CHECK(std::abs(freq - p) <= 3.0 * se + 1e-9);
    }
}

TEST_CASE("rollout of the optimal route") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    const TabularPolicy pi = optimal_route_policy();
    Rng rng = make_rng(3);
    const Trajectory traj = rollout(mdp, pi, rng, 100);
    REQUIRE(traj.steps.size() == 6);
    CHECK(traj.terminated);
    CHECK_FALSE(traj.truncated);
    for (std::size_t i = 0; i + 1 < traj.steps.size(); ++i)
        CHECK(traj.steps[i].next_state == traj.steps[i + 1].state);
    CHECK(traj.steps.back().next_state == 6);
    CHECK(traj.steps.back().reward == 10.0);
}

TEST_CASE("rollout truncation and determinism") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const TabularPolicy uniform = TabularPolicy::uniform(7, 4);
    {
        Rng rng = make_rng(11);
        const Trajectory traj = rollout(mdp, uniform, rng, 1);
        CHECK(traj.steps.size() == 1);
        CHECK((traj.truncated != traj.terminated));
    }
    Rng r1 = make_rng(42), r2 = make_rng(42);
    const Trajectory t1 = rollout(mdp, uniform, r1, 50);
    const Trajectory t2 = rollout(mdp, uniform, r2, 50);
    REQUIRE(t1.steps.size() == t2.steps.size());
    for (std::size_t i = 0; i < t1.steps.size(); ++i) {
        CHECK(t1.steps[i].state == t2.steps[i].state);
        CHECK(t1.steps[i].action == t2.steps[i].action);
    }
}

TEST_CASE("rollout returns agree with the exact policy return") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const TabularPolicy uniform = TabularPolicy::uniform(7, 4);
    const double exact = policy_return(mdp, uniform);

    Rng rng = make_rng(5);
    const int n = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const Trajectory traj = rollout(mdp, uniform, rng, 200);
        double g = 1.0, ret = 0.0;
        for (const TrajectoryStep& st : traj.steps) {
            ret += g * st.reward;
            g *= mdp.discount;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    const double mean = sum / n;
    const double var = (sum_sq - n * mean * mean) / (n - 1);
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("mdp json round-trip") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const auto path = temp_file("iql_test_mdp.json");
    save_mdp(mdp, path);
    const TabularMdp loaded = load_mdp(path);
    CHECK(loaded == mdp);
    std::filesystem::remove(path);
}

TEST_CASE("random mdp rows are dense distributions") {
    const TabularMdp mdp = make_random_mdp(6, 3, 9);
    for (int s = 0; s < mdp.n_states; ++s) {
        CHECK_FALSE(mdp.is_terminal(s));
        for (int a = 0; a < mdp.n_actions; ++a) {
            double sum = 0.0;
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                CHECK(mdp.p(s, a, s2) > 0.0);
                sum += mdp.p(s, a, s2);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}
