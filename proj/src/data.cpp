#include "iql/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace iql {

Dataset generate_dataset(const TabularMdp& mdp, std::span<const MixtureComponent> mixture,
                         int max_steps, std::uint64_t seed) {
    if (max_steps < 1) throw std::invalid_argument("generate_dataset: max_steps must be >= 1");
    int total_episodes = 0;
    for (const MixtureComponent& c : mixture) {
        if (c.episodes < 0)
            throw std::invalid_argument("generate_dataset: negative episode count");
        total_episodes += c.episodes;
    }
    if (total_episodes < 1)
        throw std::invalid_argument("generate_dataset: mixture must contain at least one episode");

    Dataset ds;
    ds.meta.seed = seed;
    ds.meta.max_steps = max_steps;
    ds.meta.env = mdp.grid.empty() ? "tabular" : "umaze";
    {
        std::ostringstream mix;
        for (std::size_t i = 0; i < mixture.size(); ++i) {
            if (i > 0) mix << ",";
            mix << mixture[i].name << ":" << mixture[i].episodes;
        }
        ds.meta.mixture = mix.str();
    }

    Rng rng = make_rng(seed, 0x64617461ULL);  // "data"
    for (const MixtureComponent& c : mixture) {
        for (int e = 0; e < c.episodes; ++e) {
            const Trajectory traj = rollout(mdp, c.policy, rng, max_steps);
            if (traj.steps.empty()) continue;
            ds.episode_starts.push_back(ds.transitions.size());
            for (std::size_t i = 0; i < traj.steps.size(); ++i) {
                const TrajectoryStep& st = traj.steps[i];
                Transition tr;
                tr.state = st.state;
                tr.action = st.action;
                tr.reward = st.reward;
                tr.next_state = st.next_state;
                tr.done = (i + 1 == traj.steps.size()) && traj.terminated;
                if (i + 1 < traj.steps.size()) tr.next_action = traj.steps[i + 1].action;
                ds.transitions.push_back(tr);
            }
        }
    }
    if (ds.transitions.empty())
        throw std::runtime_error("generate_dataset: all episodes were empty");
    return ds;
}

SupportMask empirical_support(const Dataset& ds, int n_states, int n_actions) {
    SupportMask mask = SupportMask::none(n_states, n_actions);
    for (const Transition& tr : ds.transitions) {
        if (tr.state < 0 || tr.state >= n_states || tr.action < 0 || tr.action >= n_actions)
            throw std::invalid_argument("empirical_support: transition index out of range");
        mask.set(tr.state, tr.action, true);
    }
    return mask;
}

TabularPolicy empirical_behavior(const Dataset& ds, int n_states, int n_actions,
                                 UnvisitedRule rule) {
    std::vector<double> counts(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    std::vector<double> state_counts(static_cast<std::size_t>(n_states), 0.0);
    for (const Transition& tr : ds.transitions) {
        if (tr.state < 0 || tr.state >= n_states || tr.action < 0 || tr.action >= n_actions)
            throw std::invalid_argument("empirical_behavior: transition index out of range");
        counts[static_cast<std::size_t>(tr.state) * n_actions + tr.action] += 1.0;
        state_counts[static_cast<std::size_t>(tr.state)] += 1.0;
    }

    TabularPolicy pi;
    pi.n_states = n_states;
    pi.n_actions = n_actions;
    pi.probs.assign(counts.size(), 0.0);
    for (int s = 0; s < n_states; ++s) {
        if (state_counts[static_cast<std::size_t>(s)] == 0.0) {
            if (rule == UnvisitedRule::Reject)
                throw std::invalid_argument("empirical_behavior: state " + std::to_string(s) +
                                            " is unvisited");
            for (int a = 0; a < n_actions; ++a) pi.prob(s, a) = 1.0 / n_actions;
            continue;
        }
        for (int a = 0; a < n_actions; ++a)
            pi.prob(s, a) = counts[static_cast<std::size_t>(s) * n_actions + a] /
                            state_counts[static_cast<std::size_t>(s)];
    }
    return pi;
}

TabularMdp empirical_mdp(const TabularMdp& base, const Dataset& ds) {
    TabularMdp emp = base;
    std::vector<double> counts(static_cast<std::size_t>(base.n_states) * base.n_actions, 0.0);
    std::vector<double> row_counts(emp.transitions.size(), 0.0);
    for (const Transition& tr : ds.transitions) {
        if (tr.state < 0 || tr.state >= base.n_states || tr.action < 0 ||
            tr.action >= base.n_actions || tr.next_state < 0 || tr.next_state >= base.n_states)
            throw std::invalid_argument("empirical_mdp: transition index out of range");
        counts[static_cast<std::size_t>(tr.state) * base.n_actions + tr.action] += 1.0;
        row_counts[(static_cast<std::size_t>(tr.state) * base.n_actions + tr.action) *
                       base.n_states +
                   tr.next_state] += 1.0;
    }
    for (int s = 0; s < base.n_states; ++s) {
        for (int a = 0; a < base.n_actions; ++a) {
            const double c = counts[static_cast<std::size_t>(s) * base.n_actions + a];
            if (c == 0.0) continue;  // unvisited pairs keep the base row
            for (int s2 = 0; s2 < base.n_states; ++s2)
                emp.p(s, a, s2) =
                    row_counts[(static_cast<std::size_t>(s) * base.n_actions + a) *
                                   base.n_states +
                               s2] /
                    c;
        }
    }
    return emp;
}

std::vector<std::string> validate_dataset(const Dataset& ds) {
    std::vector<std::string> violations;
    if (ds.transitions.empty()) {
        violations.push_back("dataset is empty");
        return violations;
    }
    for (std::size_t i = 0; i < ds.transitions.size(); ++i) {
        const Transition& tr = ds.transitions[i];
        if (tr.done && tr.next_action.has_value())
            violations.push_back("transition " + std::to_string(i) +
                                 " is done but carries next_action");
        if (!std::isfinite(tr.reward))
            violations.push_back("transition " + std::to_string(i) + " has non-finite reward");
        if (tr.next_action.has_value()) {
            if (i + 1 >= ds.transitions.size()) {
                violations.push_back("transition " + std::to_string(i) +
                                     " continues an episode past the end of the dataset");
            } else {
                const Transition& next = ds.transitions[i + 1];
                if (next.state != tr.next_state)
                    violations.push_back("episode chain broken at transition " +
                                         std::to_string(i) + ": next_state != following state");
                if (next.action != *tr.next_action)
                    violations.push_back("episode chain broken at transition " +
                                         std::to_string(i) + ": next_action != following action");
            }
        }
    }
    // episode starts must be exactly the positions following episode ends
    std::vector<std::size_t> expected;
    expected.push_back(0);
    for (std::size_t i = 0; i + 1 < ds.transitions.size(); ++i)
        if (!ds.transitions[i].next_action.has_value()) expected.push_back(i + 1);
    if (ds.episode_starts != expected)
        violations.push_back("episode_starts inconsistent with next_action chaining");
    return violations;
}

namespace {

nlohmann::ordered_json transition_to_json(const Transition& tr) {
    nlohmann::ordered_json j;
    j["s"] = tr.state;
    j["a"] = tr.action;
    j["r"] = tr.reward;
    j["ns"] = tr.next_state;
    if (tr.next_action.has_value())
        j["na"] = *tr.next_action;
    else
        j["na"] = nullptr;
    j["done"] = tr.done;
    return j;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
    nlohmann::ordered_json header;
    header["meta"] = {{"env", ds.meta.env},
                      {"mixture", ds.meta.mixture},
                      {"seed", ds.meta.seed},
                      {"max_steps", ds.meta.max_steps}};
    out << header.dump() << "\n";
    for (const Transition& tr : ds.transitions) out << transition_to_json(tr).dump() << "\n";
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());

    Dataset ds;
    std::string line;
    long line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error("load_dataset: parse error at line " +
                                     std::to_string(line_no) + " of " + path.string() + ": " +
                                     e.what());
        }
        try {
            if (!have_header) {
                const auto& meta = j.at("meta");
                ds.meta.env = meta.at("env").get<std::string>();
                ds.meta.mixture = meta.at("mixture").get<std::string>();
                ds.meta.seed = meta.at("seed").get<std::uint64_t>();
                ds.meta.max_steps = meta.at("max_steps").get<int>();
                have_header = true;
                continue;
            }
            Transition tr;
            tr.state = j.at("s").get<int>();
            tr.action = j.at("a").get<int>();
            tr.reward = j.at("r").get<double>();
            tr.next_state = j.at("ns").get<int>();
            if (!j.at("na").is_null()) tr.next_action = j.at("na").get<int>();
            tr.done = j.at("done").get<bool>();
            ds.transitions.push_back(tr);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_dataset: malformed record at line " +
                                     std::to_string(line_no) + " of " + path.string() + ": " +
                                     e.what());
        }
    }
    if (!have_header) throw std::runtime_error("load_dataset: missing header line");

    // boundaries are implied by next_action absence
    if (!ds.transitions.empty()) {
        ds.episode_starts.push_back(0);
        for (std::size_t i = 0; i + 1 < ds.transitions.size(); ++i)
            if (!ds.transitions[i].next_action.has_value()) ds.episode_starts.push_back(i + 1);
    }

    const std::vector<std::string> violations = validate_dataset(ds);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "load_dataset: " << path.string() << " failed validation:";
        for (const std::string& v : violations) msg << " [" << v << "]";
        throw std::runtime_error(msg.str());
    }
    return ds;
}

std::vector<Transition> sample_batch(const Dataset& ds, int batch_size, Rng& rng) {
    if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
    if (ds.transitions.empty()) throw std::invalid_argument("sample_batch: empty dataset");
    std::vector<Transition> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    const int n = static_cast<int>(ds.transitions.size());
    for (int i = 0; i < batch_size; ++i)
        batch.push_back(ds.transitions[static_cast<std::size_t>(uniform_int(rng, n))]);
    return batch;
}

}  // namespace iql
