#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

namespace iql {

/// One logged step. next_action is present exactly when the episode
/// continues after this transition (the SARSA pair); done implies absent.
struct Transition {
    int state = 0;
    int action = 0;
    double reward = 0.0;
    int next_state = 0;
    std::optional<int> next_action;
    bool done = false;

    bool operator==(const Transition&) const = default;
};

struct DatasetMeta {
    std::string env;
    std::string mixture;
    std::uint64_t seed = 0;
    int max_steps = 0;

    bool operator==(const DatasetMeta&) const = default;
};

/// Ordered transitions with episode boundaries. Immutable once generated
/// or loaded.
struct Dataset {
    std::vector<Transition> transitions;
    std::vector<std::size_t> episode_starts;
    DatasetMeta meta;

    bool operator==(const Dataset&) const = default;
};

struct MixtureComponent {
    TabularPolicy policy;
    int episodes = 0;
    std::string name;
};

/// Rolls out each mixture component its given number of episodes (at most
/// max_steps each) and logs SARSA-chained transitions. Deterministic in seed.
Dataset generate_dataset(const TabularMdp& mdp, std::span<const MixtureComponent> mixture,
                         int max_steps, std::uint64_t seed);

/// mask[s][a] = true iff (s,a) occurs as a state-action pair in the dataset.
SupportMask empirical_support(const Dataset& ds, int n_states, int n_actions);

enum class UnvisitedRule { Uniform, Reject };

/// Count-based behavior estimate mu(a|s) = count(s,a)/count(s). Unvisited
/// states get uniform rows or raise an error, per the rule.
TabularPolicy empirical_behavior(const Dataset& ds, int n_states, int n_actions,
                                 UnvisitedRule rule = UnvisitedRule::Uniform);

/// The MDP the dataset actually exhibits: count-normalized transition rows
/// for visited (s,a) pairs, the base rows elsewhere. Rewards, terminals,
/// discount and the initial distribution come from the base. Exact dynamic
/// programming on this kernel is the fixed point a sample-based learner can
/// converge to.
TabularMdp empirical_mdp(const TabularMdp& base, const Dataset& ds);

/// All dataset invariant violations (empty means well formed).
std::vector<std::string> validate_dataset(const Dataset& ds);

/// JSON-Lines file: a header line carrying meta, then one fixed-field-order
/// object per transition. save(load(x)) is byte-exact; load validates.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Uniform sampling with replacement; deterministic in the stream.
std::vector<Transition> sample_batch(const Dataset& ds, int batch_size, Rng& rng);

}  // namespace iql
