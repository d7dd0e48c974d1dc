#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iql/rng.hpp"

namespace iql {

/// Per-state grid coordinates for maze-family MDPs. Empty for MDPs without
/// spatial structure. `row` is the vertical coordinate (0 at the bottom,
/// increased by the "up" action), `col` the horizontal one.
struct GridLayout {
    int rows = 0;
    int cols = 0;
    std::vector<int> row;
    std::vector<int> col;

    bool empty() const { return row.empty(); }
    bool operator==(const GridLayout&) const = default;
};

/// Finite MDP with dense transition tensor P[s][a][s'] and expected rewards
/// r(s,a). Terminal states are absorbing with zero reward; their value is 0
/// by convention. Immutable after construction and safe to share across
/// threads.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> transitions;  // [s][a][s'], row-stochastic per (s,a)
    std::vector<double> rewards;      // [s][a]
    double discount = 0.9;
    std::vector<double> initial_dist;  // over states
    std::vector<std::uint8_t> terminal;
    GridLayout grid;  // optional

    double p(int s, int a, int s2) const {
        return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double& p(int s, int a, int s2) {
        return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    std::span<const double> row(int s, int a) const {
        return {transitions.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states,
                static_cast<std::size_t>(n_states)};
    }
    double reward(int s, int a) const {
        return rewards[static_cast<std::size_t>(s) * n_actions + a];
    }
    double& reward(int s, int a) {
        return rewards[static_cast<std::size_t>(s) * n_actions + a];
    }
    bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)] != 0; }
    bool operator==(const TabularMdp&) const = default;
};

/// Row-stochastic action distribution per state.
struct TabularPolicy {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> probs;  // [s][a]

    double prob(int s, int a) const {
        return probs[static_cast<std::size_t>(s) * n_actions + a];
    }
    double& prob(int s, int a) {
        return probs[static_cast<std::size_t>(s) * n_actions + a];
    }
    std::span<const double> row(int s) const {
        return {probs.data() + static_cast<std::size_t>(s) * n_actions,
                static_cast<std::size_t>(n_actions)};
    }

    static TabularPolicy uniform(int n_states, int n_actions);
};

/// How the maze's transition noise resolves. RandomAction replaces the
/// commanded action by a uniformly random one (outcomes stay local);
/// RandomState teleports uniformly over all states.
enum class NoiseMode { RandomAction, RandomState };

/// The 7-cell U-corridor maze on a 3x3 grid. Cells, as (col,row) pairs:
/// (0,0) -> (0,1) -> (0,2) -> (1,2) -> (2,2) -> (2,1) -> (2,0), start at
/// (0,0), terminal goal at (2,0); cells (1,0) and (1,1) are walls. Actions
/// are {up, down, left, right}; blocked moves keep the agent in place.
/// Entering the goal pays goal_reward, so r(s,a) = goal_reward * P(goal|s,a).
TabularMdp make_umaze(double noise_prob, double goal_reward, double discount,
                      NoiseMode mode = NoiseMode::RandomAction);

/// Seeded dense MDP: Dirichlet(1,..,1) transition rows, rewards uniform in
/// [0,1], discount 0.9, uniform initial distribution, no terminal states.
TabularMdp make_random_mdp(int n_states, int n_actions, std::uint64_t seed);

/// All invariant violations (empty result means the MDP is well formed).
std::vector<std::string> validate(const TabularMdp& mdp);

struct StepResult {
    int next_state;
    double reward;
    bool done;
};

/// Sample one transition. Stepping from a terminal state is a usage error.
StepResult step(const TabularMdp& mdp, int state, int action, Rng& rng);

struct TrajectoryStep {
    int state;
    int action;
    double reward;
    int next_state;
};

/// An episode. Within the step list, next_state of step i equals state of
/// step i+1. terminated means a terminal state was entered; truncated means
/// the step cap was hit first.
struct Trajectory {
    std::vector<TrajectoryStep> steps;
    bool terminated = false;
    bool truncated = false;
};

/// Roll one episode: initial state from initial_dist, actions from the
/// policy, until a terminal state or max_steps.
Trajectory rollout(const TabularMdp& mdp, const TabularPolicy& policy, Rng& rng, int max_steps);

/// JSON (de)serialization. load_mdp validates and throws on violations.
void save_mdp(const TabularMdp& mdp, const std::filesystem::path& path);
TabularMdp load_mdp(const std::filesystem::path& path);

}  // namespace iql
