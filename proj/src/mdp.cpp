#include "iql/mdp.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace iql {

namespace {

constexpr double kProbTol = 1e-9;

struct Cell {
    int col;
    int row;
};

// Corridor order doubles as the state indexing; start is state 0, goal is
// state 6.
constexpr std::array<Cell, 7> kUmazeCells = {
    Cell{0, 0}, Cell{0, 1}, Cell{0, 2}, Cell{1, 2}, Cell{2, 2}, Cell{2, 1}, Cell{2, 0}};

int umaze_cell_index(int col, int row) {
    for (std::size_t i = 0; i < kUmazeCells.size(); ++i) {
        if (kUmazeCells[i].col == col && kUmazeCells[i].row == row) return static_cast<int>(i);
    }
    return -1;
}

// up, down, left, right
constexpr std::array<int, 4> kDCol = {0, 0, -1, 1};
constexpr std::array<int, 4> kDRow = {1, -1, 0, 0};

// Deterministic move; walls and the grid edge keep the agent in place.
int umaze_move(int s, int a) {
    const Cell c = kUmazeCells[static_cast<std::size_t>(s)];
    const int nc = c.col + kDCol[static_cast<std::size_t>(a)];
    const int nr = c.row + kDRow[static_cast<std::size_t>(a)];
    if (nc < 0 || nc > 2 || nr < 0 || nr > 2) return s;
    const int idx = umaze_cell_index(nc, nr);
    return idx < 0 ? s : idx;
}

}  // namespace

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
    TabularPolicy pi;
    pi.n_states = n_states;
    pi.n_actions = n_actions;
    pi.probs.assign(static_cast<std::size_t>(n_states) * n_actions, 1.0 / n_actions);
    return pi;
}

TabularMdp make_umaze(double noise_prob, double goal_reward, double discount, NoiseMode mode) {
    if (!(noise_prob >= 0.0 && noise_prob < 1.0))
        throw std::invalid_argument("make_umaze: noise_prob must be in [0,1)");
    if (!(discount >= 0.0 && discount < 1.0))
        throw std::invalid_argument("make_umaze: discount must be in [0,1)");

    const int n_states = static_cast<int>(kUmazeCells.size());
    const int n_actions = 4;
    const int start = 0;
    const int goal = n_states - 1;

    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.discount = discount;
    mdp.transitions.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
    mdp.rewards.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    mdp.initial_dist.assign(static_cast<std::size_t>(n_states), 0.0);
    mdp.initial_dist[start] = 1.0;
    mdp.terminal.assign(static_cast<std::size_t>(n_states), 0);
    mdp.terminal[goal] = 1;

    mdp.grid.rows = 3;
    mdp.grid.cols = 3;
    for (const Cell& c : kUmazeCells) {
        mdp.grid.col.push_back(c.col);
        mdp.grid.row.push_back(c.row);
    }

    for (int s = 0; s < n_states; ++s) {
        if (mdp.is_terminal(s)) {
            for (int a = 0; a < n_actions; ++a) mdp.p(s, a, s) = 1.0;
            continue;
        }
        for (int a = 0; a < n_actions; ++a) {
            mdp.p(s, a, umaze_move(s, a)) += 1.0 - noise_prob;
            if (noise_prob > 0.0) {
                if (mode == NoiseMode::RandomAction) {
                    for (int b = 0; b < n_actions; ++b)
                        mdp.p(s, a, umaze_move(s, b)) += noise_prob / n_actions;
                } else {
                    for (int s2 = 0; s2 < n_states; ++s2)
                        mdp.p(s, a, s2) += noise_prob / n_states;
                }
            }
            // reward is paid on entering the goal
            mdp.reward(s, a) = goal_reward * mdp.p(s, a, goal);
        }
    }
    return mdp;
}

TabularMdp make_random_mdp(int n_states, int n_actions, std::uint64_t seed) {
    if (n_states < 2) throw std::invalid_argument("make_random_mdp: n_states must be >= 2");
    if (n_actions < 2) throw std::invalid_argument("make_random_mdp: n_actions must be >= 2");

    Rng rng = make_rng(seed, 0x6d6470ULL);  // "mdp"

    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.discount = 0.9;
    mdp.transitions.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
    mdp.rewards.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    mdp.initial_dist.assign(static_cast<std::size_t>(n_states), 1.0 / n_states);
    mdp.terminal.assign(static_cast<std::size_t>(n_states), 0);

    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            // Dirichlet(1,...,1) row: normalized unit exponentials
            double total = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                const double e = -std::log(1.0 - uniform01(rng));
                mdp.p(s, a, s2) = e;
                total += e;
            }
            for (int s2 = 0; s2 < n_states; ++s2) mdp.p(s, a, s2) /= total;
            mdp.reward(s, a) = uniform01(rng);
        }
    }
    return mdp;
}

std::vector<std::string> validate(const TabularMdp& mdp) {
    std::vector<std::string> violations;
    auto fail = [&violations](const std::string& msg) { violations.push_back(msg); };

    if (mdp.n_states <= 0 || mdp.n_actions <= 0) {
        fail("state/action counts must be positive");
        return violations;
    }
    const auto ns = static_cast<std::size_t>(mdp.n_states);
    const auto na = static_cast<std::size_t>(mdp.n_actions);
    if (mdp.transitions.size() != ns * na * ns || mdp.rewards.size() != ns * na ||
        mdp.initial_dist.size() != ns || mdp.terminal.size() != ns) {
        fail("tensor sizes inconsistent with n_states/n_actions");
        return violations;
    }
    if (!(mdp.discount >= 0.0 && mdp.discount < 1.0))
        fail("discount " + std::to_string(mdp.discount) + " outside [0,1)");

    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            double sum = 0.0;
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                const double p = mdp.p(s, a, s2);
                if (!(p >= 0.0))
                    fail("transitions[s=" + std::to_string(s) + "][a=" + std::to_string(a) +
                         "][s'=" + std::to_string(s2) + "] = " + std::to_string(p) +
                         " is negative or non-finite");
                sum += p;
            }
            if (std::abs(sum - 1.0) > kProbTol)
                fail("transition row (s=" + std::to_string(s) + ",a=" + std::to_string(a) +
                     ") sums to " + std::to_string(sum));
            if (!std::isfinite(mdp.reward(s, a)))
                fail("reward (s=" + std::to_string(s) + ",a=" + std::to_string(a) +
                     ") is not finite");
        }
        if (mdp.is_terminal(s)) {
            for (int a = 0; a < mdp.n_actions; ++a) {
                if (std::abs(mdp.p(s, a, s) - 1.0) > kProbTol)
                    fail("terminal state " + std::to_string(s) + " is not absorbing under action " +
                         std::to_string(a));
                if (mdp.reward(s, a) != 0.0)
                    fail("terminal state " + std::to_string(s) + " has nonzero reward under action " +
                         std::to_string(a));
            }
        }
    }

    double init_sum = 0.0;
    for (double p : mdp.initial_dist) {
        if (!(p >= 0.0)) fail("initial_dist has a negative or non-finite entry");
        init_sum += p;
    }
    if (std::abs(init_sum - 1.0) > kProbTol)
        fail("initial_dist sums to " + std::to_string(init_sum));

    if (!mdp.grid.empty() &&
        (mdp.grid.row.size() != ns || mdp.grid.col.size() != ns))
        fail("grid layout size inconsistent with n_states");

    return violations;
}

StepResult step(const TabularMdp& mdp, int state, int action, Rng& rng) {
    if (state < 0 || state >= mdp.n_states) throw std::invalid_argument("step: state out of range");
    if (action < 0 || action >= mdp.n_actions)
        throw std::invalid_argument("step: action out of range");
    if (mdp.is_terminal(state))
        throw std::invalid_argument("step: cannot step from terminal state " +
                                    std::to_string(state));
    const int next = sample_categorical(mdp.row(state, action), rng);
    return {next, mdp.reward(state, action), mdp.is_terminal(next)};
}

Trajectory rollout(const TabularMdp& mdp, const TabularPolicy& policy, Rng& rng, int max_steps) {
    if (max_steps < 1) throw std::invalid_argument("rollout: max_steps must be >= 1");
    Trajectory traj;
    int state = sample_categorical(mdp.initial_dist, rng);
    if (mdp.is_terminal(state)) {
        traj.terminated = true;
        return traj;
    }
    for (int t = 0; t < max_steps; ++t) {
        const int action = sample_categorical(policy.row(state), rng);
        const StepResult r = step(mdp, state, action, rng);
        traj.steps.push_back({state, action, r.reward, r.next_state});
        state = r.next_state;
        if (r.done) {
            traj.terminated = true;
            return traj;
        }
    }
    traj.truncated = true;
    return traj;
}

void save_mdp(const TabularMdp& mdp, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["discount"] = mdp.discount;
    j["transitions"] = mdp.transitions;
    j["rewards"] = mdp.rewards;
    j["initial_dist"] = mdp.initial_dist;
    j["terminal"] = std::vector<bool>(mdp.terminal.begin(), mdp.terminal.end());
    if (!mdp.grid.empty()) {
        j["grid"] = {{"rows", mdp.grid.rows},
                     {"cols", mdp.grid.cols},
                     {"row", mdp.grid.row},
                     {"col", mdp.grid.col}};
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_mdp: cannot open " + path.string());
    out << j.dump(2) << "\n";
}

TabularMdp load_mdp(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_mdp: cannot open " + path.string());
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("load_mdp: parse error in " + path.string() + ": " + e.what());
    }

    TabularMdp mdp;
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.discount = j.at("discount").get<double>();
    mdp.transitions = j.at("transitions").get<std::vector<double>>();
    mdp.rewards = j.at("rewards").get<std::vector<double>>();
    mdp.initial_dist = j.at("initial_dist").get<std::vector<double>>();
    for (bool b : j.at("terminal").get<std::vector<bool>>())
        mdp.terminal.push_back(b ? 1 : 0);
    if (j.contains("grid")) {
        mdp.grid.rows = j["grid"].at("rows").get<int>();
        mdp.grid.cols = j["grid"].at("cols").get<int>();
        mdp.grid.row = j["grid"].at("row").get<std::vector<int>>();
        mdp.grid.col = j["grid"].at("col").get<std::vector<int>>();
    }

    const std::vector<std::string> violations = validate(mdp);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "load_mdp: " << path.string() << " failed validation:";
        for (const std::string& v : violations) msg << " [" << v << "]";
        throw std::runtime_error(msg.str());
    }
    return mdp;
}

}  // namespace iql
