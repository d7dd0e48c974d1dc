#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iql/data.hpp"
#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

using namespace iql;

namespace {

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<MixtureComponent> maze_mixture(const TabularMdp& mdp, int optimal, int uniform) {
    std::vector<MixtureComponent> mix;
    mix.push_back({greedy_policy(value_iteration(mdp).q), optimal, "optimal"});
    mix.push_back({TabularPolicy::uniform(mdp.n_states, mdp.n_actions), uniform, "uniform"});
    return mix;
}

}  // namespace

TEST_CASE("single optimal episode on the deterministic maze") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    std::vector<MixtureComponent> mix = {{greedy_policy(value_iteration(mdp).q), 1, "optimal"}};
    const Dataset ds = generate_dataset(mdp, mix, 100, 3);
    REQUIRE(ds.transitions.size() == 6);
    CHECK(ds.episode_starts == std::vector<std::size_t>{0});
    CHECK(ds.transitions.back().done);
    CHECK(ds.transitions.back().reward == 10.0);
    CHECK_FALSE(ds.transitions.back().next_action.has_value());
    for (std::size_t i = 0; i + 1 < ds.transitions.size(); ++i) {
        REQUIRE(ds.transitions[i].next_action.has_value());
        CHECK(*ds.transitions[i].next_action == ds.transitions[i + 1].action);
        CHECK(ds.transitions[i].next_state == ds.transitions[i + 1].state);
    }
    CHECK(validate_dataset(ds).empty());
}

TEST_CASE("mixture datasets lead with the optimal route") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    const Dataset ds = generate_dataset(mdp, maze_mixture(mdp, 1, 99), 100, 7);
    // the first episode is the optimal one: 6 steps from start to goal
    constexpr std::array<int, 6> route_states = {0, 1, 2, 3, 4, 5};
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(ds.transitions[i].state == route_states[i]);
    CHECK(ds.transitions[5].done);
    CHECK(ds.episode_starts.size() == 100);
    CHECK(validate_dataset(ds).empty());
}

TEST_CASE("generation is deterministic in the seed") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const Dataset a = generate_dataset(mdp, maze_mixture(mdp, 1, 20), 100, 11);
    const Dataset b = generate_dataset(mdp, maze_mixture(mdp, 1, 20), 100, 11);
    const Dataset c = generate_dataset(mdp, maze_mixture(mdp, 1, 20), 100, 12);
    CHECK(a == b);
    CHECK(a.transitions != c.transitions);

    const auto pa = temp_file("iql_ds_a.jsonl"), pb = temp_file("iql_ds_b.jsonl");
    save_dataset(a, pa);
    save_dataset(b, pb);
    CHECK(read_bytes(pa) == read_bytes(pb));
    std::filesystem::remove(pa);
    std::filesystem::remove(pb);
}

TEST_CASE("empirical support counts occurrences") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    Dataset single;
    single.transitions.push_back({2, 3, 0.0, 3, std::nullopt, false});
    single.episode_starts = {0};
    const SupportMask mask = empirical_support(single, 7, 4);
    int trues = 0;
    for (int s = 0; s < 7; ++s)
        for (int a = 0; a < 4; ++a)
            if (mask.at(s, a)) ++trues;
    CHECK(trues == 1);
    CHECK(mask.at(2, 3));

    const Dataset ds = generate_dataset(mdp, maze_mixture(mdp, 1, 99), 100, 5);
    const SupportMask full_mask = empirical_support(ds, 7, 4);
    for (int s = 0; s < 6; ++s) CHECK(full_mask.state_has_support(s));

    // idempotence: doubling the dataset leaves the mask unchanged
    Dataset doubled = ds;
    doubled.transitions.insert(doubled.transitions.end(), ds.transitions.begin(),
                               ds.transitions.end());
    CHECK(empirical_support(doubled, 7, 4).mask == full_mask.mask);
}

TEST_CASE("empirical behavior recovers a deterministic generator") {
    const TabularMdp mdp = make_umaze(0.0, 10.0, 0.9);
    const TabularPolicy optimal = greedy_policy(value_iteration(mdp).q);
    std::vector<MixtureComponent> mix = {{optimal, 5, "optimal"}};
    const Dataset ds = generate_dataset(mdp, mix, 100, 2);
    const TabularPolicy mu = empirical_behavior(ds, 7, 4, UnvisitedRule::Uniform);
    for (int s = 0; s < 6; ++s)
        for (int a = 0; a < 4; ++a)
            CHECK(mu.prob(s, a) == doctest::Approx(optimal.prob(s, a)));
    // the goal state is never acted from; uniform fallback applies
    for (int a = 0; a < 4; ++a) CHECK(mu.prob(6, a) == doctest::Approx(0.25));
}

TEST_CASE("empirical behavior matches a direct recount") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const Dataset ds = generate_dataset(mdp, maze_mixture(mdp, 1, 99), 100, 13);
    const TabularPolicy mu = empirical_behavior(ds, 7, 4);

    std::array<std::array<double, 4>, 7> counts{};
    std::array<double, 7> totals{};
    for (const Transition& tr : ds.transitions) {
        counts[static_cast<std::size_t>(tr.state)][static_cast<std::size_t>(tr.action)] += 1.0;
        totals[static_cast<std::size_t>(tr.state)] += 1.0;
    }
    for (int s = 0; s < 7; ++s) {
        double row_sum = 0.0;
        for (int a = 0; a < 4; ++a) {
            const double expected =
                totals[static_cast<std::size_t>(s)] > 0.0
                    ? counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] /
                          totals[static_cast<std::size_t>(s)]
                    : 0.25;
            CHECK(mu.prob(s, a) == doctest::Approx(expected).epsilon(1e-12));
            row_sum += mu.prob(s, a);
        }
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    // support/behavior consistency on visited states
    const SupportMask mask = empirical_support(ds, 7, 4);
    for (int s = 0; s < 7; ++s) {
        if (totals[static_cast<std::size_t>(s)] == 0.0) continue;
        for (int a = 0; a < 4; ++a) CHECK((mu.prob(s, a) > 0.0) == mask.at(s, a));
    }
}

TEST_CASE("unvisited states: uniform fallback or rejection") {
    Dataset tiny;
    tiny.transitions.push_back({0, 1, 0.0, 1, std::nullopt, false});
    tiny.episode_starts = {0};
    const TabularPolicy mu = empirical_behavior(tiny, 3, 2, UnvisitedRule::Uniform);
    CHECK(mu.prob(1, 0) == doctest::Approx(0.5));
    CHECK(mu.prob(2, 1) == doctest::Approx(0.5));
    CHECK_THROWS_AS(empirical_behavior(tiny, 3, 2, UnvisitedRule::Reject),
                    std::invalid_argument);
}

TEST_CASE("dataset save/load round-trip is byte-exact") {
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    // max_steps 5 forces truncated episodes, so boundary reconstruction is
    // exercised on episodes that do not end in done
    std::vector<MixtureComponent> mix = {
        {TabularPolicy::uniform(7, 4), 10, "uniform"}};
    const Dataset ds = generate_dataset(mdp, mix, 5, 21);
    const auto p1 = temp_file("iql_ds_rt1.jsonl"), p2 = temp_file("iql_ds_rt2.jsonl");
    save_dataset(ds, p1);
    const Dataset loaded = load_dataset(p1);
    CHECK(loaded == ds);
    save_dataset(loaded, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("malformed dataset files raise named errors") {
    const auto path = temp_file("iql_ds_bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"meta":{"env":"umaze","mixture":"uniform:1","seed":0,"max_steps":5}})" << "\n";
        out << R"({"s":0,"a":1,"r":0.0,"ns":1,"na":null,"done":fal)" << "\n";  // truncated
    }
    try {
        load_dataset(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << R"({"meta":{"env":"umaze","mixture":"uniform:1","seed":0,"max_steps":5}})" << "\n";
        out << R"({"s":0,"a":1,"r":0.0,"ns":1,"na":2,"done":true})" << "\n";  // done with na
    }
    CHECK_THROWS_WITH_AS(load_dataset(path),
                         doctest::Contains("done but carries next_action"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("sample_batch basics") {
    Dataset tiny;
    tiny.transitions.push_back({4, 2, 1.5, 5, std::nullopt, false});
    tiny.episode_starts = {0};
    Rng rng = make_rng(1);
    const auto batch = sample_batch(tiny, 1, rng);
    REQUIRE(batch.size() == 1);
    CHECK(batch[0] == tiny.transitions[0]);

    Rng r1 = make_rng(33), r2 = make_rng(33);
    const TabularMdp mdp = make_umaze(0.25, 10.0, 0.9);
    const Dataset ds = generate_dataset(
        mdp, std::vector<MixtureComponent>{{TabularPolicy::uniform(7, 4), 20, "uniform"}}, 50, 2);
    const auto b1 = sample_batch(ds, 64, r1);
    const auto b2 = sample_batch(ds, 64, r2);
    CHECK(b1 == b2);
}

TEST_CASE("sample_batch draws uniformly") {
    Dataset ds;
    const int n = 10;
    for (int i = 0; i < n; ++i) {
        // distinct rewards make each transition identifiable
        ds.transitions.push_back({0, 0, static_cast<double>(i), 0, std::nullopt, false});
        ds.episode_starts.push_back(static_cast<std::size_t>(i));
    }
    Rng rng = make_rng(8);
    const int draws = 100000;
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (const Transition& tr : sample_batch(ds, draws, rng))
        counts[static_cast<std::size_t>(tr.reward)]++;
    const double p = 1.0 / n;
    const double se = std::sqrt(p * (1.0 - p) / draws);
    for (int i = 0; i < n; ++i) {
        const double freq = static_cast<double>(counts[static_cast<std::size_t>(i)]) / draws;
        CHECK(std::abs(freq - p) <= 3.0 * se + 1e-9);
    }
}
