#include "iql/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "iql/data.hpp"
#include "iql/errors.hpp"
#include "iql/heatmap.hpp"
#include "iql/learner.hpp"
#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

namespace iql {

namespace {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// option structs; each serializes to/from the resolved-config echo

struct EnvOptions {
    std::string env = "umaze";
    double noise = 0.25;
    double goal_reward = 10.0;
    double discount = 0.9;
    std::string noise_mode = "random_action";
    std::string mdp_path;  // when nonempty, loads the MDP from file instead

    Json to_json() const {
        return Json{{"env", env},           {"noise", noise},
                    {"goal_reward", goal_reward}, {"discount", discount},
                    {"noise_mode", noise_mode},   {"mdp_path", mdp_path}};
    }
    static EnvOptions from_json(const Json& j) {
        EnvOptions o;
        o.env = j.at("env").get<std::string>();
        o.noise = j.at("noise").get<double>();
        o.goal_reward = j.at("goal_reward").get<double>();
        o.discount = j.at("discount").get<double>();
        o.noise_mode = j.at("noise_mode").get<std::string>();
        o.mdp_path = j.at("mdp_path").get<std::string>();
        return o;
    }
};

TabularMdp resolve_mdp(const EnvOptions& opts) {
    if (!opts.mdp_path.empty()) return load_mdp(opts.mdp_path);
    if (opts.env != "umaze")
        throw std::invalid_argument("unknown --env '" + opts.env + "' (supported: umaze)");
    NoiseMode mode;
    if (opts.noise_mode == "random_action")
        mode = NoiseMode::RandomAction;
    else if (opts.noise_mode == "random_state")
        mode = NoiseMode::RandomState;
    else
        throw std::invalid_argument("unknown --noise-mode '" + opts.noise_mode + "'");
    return make_umaze(opts.noise, opts.goal_reward, opts.discount, mode);
}

void add_env_options(CLI::App* sub, EnvOptions& opts) {
    sub->add_option("--env", opts.env, "environment name (umaze)");
    sub->add_option("--noise", opts.noise, "umaze action-noise probability");
    sub->add_option("--goal-reward", opts.goal_reward, "umaze goal reward");
    sub->add_option("--discount", opts.discount, "discount factor");
    sub->add_option("--noise-mode", opts.noise_mode,
                    "umaze noise semantics: random_action | random_state");
    sub->add_option("--mdp", opts.mdp_path, "load the MDP from a JSON file instead of --env");
}

void add_learner_options(CLI::App* sub, IqlConfig& config, bool with_tau_and_seed) {
    if (with_tau_and_seed) sub->add_option("--tau", config.tau, "expectile level in (0,1)");
    sub->add_option("--beta", config.beta, "AWR inverse temperature");
    sub->add_option("--lr-v", config.lr_v, "value learning rate");
    sub->add_option("--lr-q", config.lr_q, "Q learning rate");
    sub->add_option("--lr-pi", config.lr_pi, "policy learning rate (cosine-scheduled)");
    sub->add_option("--polyak", config.polyak_rate, "target soft-update rate");
    sub->add_option("--td-steps", config.td_steps, "TD gradient steps");
    sub->add_option("--policy-steps", config.policy_steps, "policy extraction gradient steps");
    sub->add_option("--batch-size", config.batch_size, "minibatch size");
    sub->add_flag("--double-q,!--no-double-q", config.double_q, "clipped double-Q targets");
    sub->add_option("--adv-clip", config.adv_clip, "cap on exponentiated advantages");
    sub->add_option("--mlp-width", config.mlp_width, "hidden width for --kind mlp");
    sub->add_option("--eval-interval", config.eval_interval, "steps between metric records");
}

std::uint64_t fallback_seed() {
    if (const char* env = std::getenv("IQL_LAB_SEED")) {
        try {
            return static_cast<std::uint64_t>(std::stoull(env));
        } catch (const std::exception&) {
            throw std::invalid_argument("IQL_LAB_SEED is not a valid integer");
        }
    }
    return 0;
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, sep)) parts.push_back(item);
    return parts;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
    std::vector<double> values;
    for (const std::string& part : split(text, ',')) {
        try {
            values.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string(what) + ": bad entry '" + part + "'");
        }
    }
    if (values.empty()) throw std::invalid_argument(std::string(what) + ": empty list");
    return values;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const std::string& part : split(text, ',')) {
        try {
            seeds.push_back(std::stoull(part));
        } catch (const std::exception&) {
            throw std::invalid_argument("--seeds: bad entry '" + part + "'");
        }
    }
    if (seeds.empty()) throw std::invalid_argument("--seeds: empty list");
    return seeds;
}

std::vector<MixtureComponent> parse_mixture(const std::string& text, const TabularMdp& mdp) {
    std::vector<MixtureComponent> mixture;
    for (const std::string& part : split(text, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("--mix: expected name:count, got '" + part + "'");
        const std::string name = part.substr(0, colon);
        int count = 0;
        try {
            count = std::stoi(part.substr(colon + 1));
        } catch (const std::exception&) {
            throw std::invalid_argument("--mix: bad count in '" + part + "'");
        }
        MixtureComponent c;
        c.name = name;
        c.episodes = count;
        if (name == "uniform") {
            c.policy = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
        } else if (name == "optimal") {
            c.policy = greedy_policy(value_iteration(mdp).q);
        } else {
            throw std::invalid_argument("--mix: unknown policy '" + name +
                                        "' (supported: optimal, uniform)");
        }
        mixture.push_back(std::move(c));
    }
    return mixture;
}

std::filesystem::path prepare_out_dir(const std::string& out_dir) {
    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_echo(const std::filesystem::path& dir, const std::string& subcommand,
                const Json& options) {
    Json echo;
    echo["subcommand"] = subcommand;
    echo["options"] = options;
    std::string name = subcommand;
    for (char& c : name)
        if (c == '-') c = '_';
    std::ofstream out(dir / (name + "_config.json"));
    if (!out) throw std::runtime_error("cannot write config echo in " + dir.string());
    out << echo.dump(2) << "\n";
}

double support_optimal_return(const TabularMdp& mdp, const Dataset& ds) {
    const SupportMask support = empirical_support(ds, mdp.n_states, mdp.n_actions);
    const DpResult res = support_value_iteration(mdp, support);
    double j = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
        j += mdp.initial_dist[static_cast<std::size_t>(s)] *
             res.value.v[static_cast<std::size_t>(s)];
    return j;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    EnvOptions env;
    std::string mix = "optimal:1,uniform:99";
    int max_steps = 100;
    std::uint64_t seed = 0;
    std::string out = "dataset.jsonl";
    std::string mdp_out;
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["env"] = env.to_json();
        j["mix"] = mix;
        j["max_steps"] = max_steps;
        j["seed"] = seed;
        j["out"] = out;
        j["mdp_out"] = mdp_out;
        j["out_dir"] = out_dir;
        return j;
    }
    static GenDataOptions from_json(const Json& j) {
        GenDataOptions o;
        o.env = EnvOptions::from_json(j.at("env"));
        o.mix = j.at("mix").get<std::string>();
        o.max_steps = j.at("max_steps").get<int>();
        o.seed = j.at("seed").get<std::uint64_t>();
        o.out = j.at("out").get<std::string>();
        o.mdp_out = j.at("mdp_out").get<std::string>();
        o.out_dir = j.at("out_dir").get<std::string>();
        return o;
    }
};

int run_gen_data(const GenDataOptions& opts) {
    const TabularMdp mdp = resolve_mdp(opts.env);
    const std::vector<MixtureComponent> mixture = parse_mixture(opts.mix, mdp);
    const Dataset ds = generate_dataset(mdp, mixture, opts.max_steps, opts.seed);

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    save_dataset(ds, dir / opts.out);
    if (!opts.mdp_out.empty()) save_mdp(mdp, dir / opts.mdp_out);
    write_echo(dir, "gen-data", opts.to_json());

    Json summary;
    summary["dataset"] = (dir / opts.out).string();
    summary["transitions"] = ds.transitions.size();
    summary["episodes"] = ds.episode_starts.size();
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    EnvOptions env;
    std::string data;
    std::string algo = "iql";
    std::string kind = "table";
    IqlConfig config;
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["env"] = env.to_json();
        j["data"] = data;
        j["algo"] = algo;
        j["kind"] = kind;
        j["config"] = config.to_json();
        j["out_dir"] = out_dir;
        return j;
    }
    static TrainOptions from_json(const Json& j) {
        TrainOptions o;
        o.env = EnvOptions::from_json(j.at("env"));
        o.data = j.at("data").get<std::string>();
        o.algo = j.at("algo").get<std::string>();
        o.kind = j.at("kind").get<std::string>();
        o.config = IqlConfig::from_json(j.at("config"));
        return o;  // out_dir is filled by the caller
    }
};

ApproxKind parse_kind(const std::string& kind) {
    if (kind == "table") return ApproxKind::Table;
    if (kind == "linear") return ApproxKind::Linear;
    if (kind == "mlp") return ApproxKind::Mlp;
    throw std::invalid_argument("unknown --kind '" + kind + "'");
}

int run_train(TrainOptions opts) {
    if (opts.data.empty()) throw std::invalid_argument("train: --data is required");
    if (opts.algo != "iql" && opts.algo != "onestep")
        throw std::invalid_argument("unknown --algo '" + opts.algo + "'");
    opts.config.kind = parse_kind(opts.kind);
    opts.config.check();
    const TabularMdp mdp = resolve_mdp(opts.env);
    const Dataset ds = load_dataset(opts.data);

    const auto [learner, metrics] = opts.algo == "onestep"
                                        ? train_onestep_baseline(opts.config, ds, mdp)
                                        : train_offline(opts.config, ds, mdp);

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    save_checkpoint(learner, opts.config, dir / "checkpoint.json");
    save_metrics(metrics, dir / "metrics.jsonl");
    write_echo(dir, "train", opts.to_json());

    const double j_pi = policy_return(mdp, extracted_greedy_policy(learner));
    Json summary;
    summary["checkpoint"] = (dir / "checkpoint.json").string();
    summary["exact_return"] = j_pi;
    const double j_uniform =
        policy_return(mdp, TabularPolicy::uniform(mdp.n_states, mdp.n_actions));
    summary["uniform_return"] = j_uniform;
    const double j_best = support_optimal_return(mdp, ds);
    summary["support_optimal_return"] = j_best;
    summary["normalized_return"] = normalized_return(j_pi, j_uniform, j_best);
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    EnvOptions env;
    std::string checkpoint;
    std::string data;
    int episodes = 100;
    int max_steps = 100;
    std::uint64_t seed = 0;
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["env"] = env.to_json();
        j["checkpoint"] = checkpoint;
        j["data"] = data;
        j["episodes"] = episodes;
        j["max_steps"] = max_steps;
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        return j;
    }
    static EvalOptions from_json(const Json& j) {
        EvalOptions o;
        o.env = EnvOptions::from_json(j.at("env"));
        o.checkpoint = j.at("checkpoint").get<std::string>();
        o.data = j.at("data").get<std::string>();
        o.episodes = j.at("episodes").get<int>();
        o.max_steps = j.at("max_steps").get<int>();
        o.seed = j.at("seed").get<std::uint64_t>();
        return o;
    }
};

int run_eval(const EvalOptions& opts) {
    if (opts.checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required");
    if (opts.episodes < 1) throw std::invalid_argument("eval: --episodes must be >= 1");
    const TabularMdp mdp = resolve_mdp(opts.env);
    const auto [learner, config] = load_checkpoint(opts.checkpoint);
    if (learner.n_states != mdp.n_states || learner.n_actions != mdp.n_actions)
        throw std::invalid_argument("eval: checkpoint/MDP arity mismatch");

    const TabularPolicy policy = extracted_greedy_policy(learner);
    const double exact = policy_return(mdp, policy);

    Rng rng = make_rng(opts.seed, 0x6576616cULL);  // "eval"
    double mc = 0.0;
    for (int e = 0; e < opts.episodes; ++e) {
        const Trajectory traj = rollout(mdp, policy, rng, opts.max_steps);
        double g = 1.0;
        double ret = 0.0;
        for (const TrajectoryStep& st : traj.steps) {
            ret += g * st.reward;
            g *= mdp.discount;
        }
        mc += ret;
    }
    mc /= static_cast<double>(opts.episodes);

    Json summary;
    summary["exact_return"] = exact;
    summary["mc_return"] = mc;
    if (!opts.data.empty()) {
        const Dataset ds = load_dataset(opts.data);
        const double j_uniform =
            policy_return(mdp, TabularPolicy::uniform(mdp.n_states, mdp.n_actions));
        summary["normalized_return"] =
            normalized_return(exact, j_uniform, support_optimal_return(mdp, ds));
    }

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    write_echo(dir, "eval", opts.to_json());
    std::ofstream out(dir / "eval.json");
    out << summary.dump(2) << "\n";
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sweep-tau

struct SweepOptions {
    EnvOptions env;
    std::string data;
    std::string taus = "0.5,0.7,0.9,0.95";
    std::string seeds = "0,1,2,3,4,5,6,7,8,9";
    std::string kind = "table";
    IqlConfig config;
    std::string out = "sweep.csv";
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["env"] = env.to_json();
        j["data"] = data;
        j["taus"] = taus;
        j["seeds"] = seeds;
        j["kind"] = kind;
        j["config"] = config.to_json();
        j["out"] = out;
        j["out_dir"] = out_dir;
        return j;
    }
    static SweepOptions from_json(const Json& j) {
        SweepOptions o;
        o.env = EnvOptions::from_json(j.at("env"));
        o.data = j.at("data").get<std::string>();
        o.taus = j.at("taus").get<std::string>();
        o.seeds = j.at("seeds").get<std::string>();
        o.kind = j.at("kind").get<std::string>();
        o.config = IqlConfig::from_json(j.at("config"));
        o.out = j.at("out").get<std::string>();
        return o;
    }
};

int run_sweep(SweepOptions opts) {
    if (opts.data.empty()) throw std::invalid_argument("sweep-tau: --data is required");
    opts.config.kind = parse_kind(opts.kind);
    const TabularMdp mdp = resolve_mdp(opts.env);
    const Dataset ds = load_dataset(opts.data);
    const std::vector<double> taus = parse_double_list(opts.taus, "--taus");
    const std::vector<std::uint64_t> seeds = parse_seed_list(opts.seeds);

    const std::vector<TauSweepRow> rows = sweep_tau(opts.config, taus, ds, mdp, seeds);

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    std::ofstream out(dir / opts.out);
    if (!out) throw std::runtime_error("sweep-tau: cannot open output CSV");
    out << "tau,mean_return,std_return\n";
    for (const TauSweepRow& row : rows)
        out << format_double(row.tau) << "," << format_double(row.mean_return) << ","
            << format_double(row.std_return) << "\n";
    write_echo(dir, "sweep-tau", opts.to_json());

    Json summary;
    summary["csv"] = (dir / opts.out).string();
    summary["rows"] = rows.size();
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// heatmap

struct HeatmapOptions {
    EnvOptions env;
    std::string source = "optimal";  // checkpoint | optimal | support | sarsa | expectile
    std::string checkpoint;
    std::string data;
    double tau = 0.95;
    bool per_action = false;
    std::string out = "heatmap.csv";
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["env"] = env.to_json();
        j["source"] = source;
        j["checkpoint"] = checkpoint;
        j["data"] = data;
        j["tau"] = tau;
        j["per_action"] = per_action;
        j["out"] = out;
        j["out_dir"] = out_dir;
        return j;
    }
    static HeatmapOptions from_json(const Json& j) {
        HeatmapOptions o;
        o.env = EnvOptions::from_json(j.at("env"));
        o.source = j.at("source").get<std::string>();
        o.checkpoint = j.at("checkpoint").get<std::string>();
        o.data = j.at("data").get<std::string>();
        o.tau = j.at("tau").get<double>();
        o.per_action = j.at("per_action").get<bool>();
        o.out = j.at("out").get<std::string>();
        return o;
    }
};

int run_heatmap(const HeatmapOptions& opts) {
    const TabularMdp mdp = resolve_mdp(opts.env);
    ValueTable values;
    QTable q;
    if (opts.source == "checkpoint") {
        if (opts.checkpoint.empty())
            throw std::invalid_argument("heatmap: --checkpoint required for source=checkpoint");
        const auto [learner, config] = load_checkpoint(opts.checkpoint);
        if (learner.n_states != mdp.n_states || learner.n_actions != mdp.n_actions)
            throw std::invalid_argument("heatmap: checkpoint/MDP arity mismatch");
        q.n_states = mdp.n_states;
        q.n_actions = mdp.n_actions;
        for (int s = 0; s < mdp.n_states; ++s) {
            values.v.push_back(learner.v_at(s));
            for (int a = 0; a < mdp.n_actions; ++a) q.q.push_back(learner.q_at(learner.q1, s, a));
        }
    } else if (opts.source == "optimal") {
        DpResult res = value_iteration(mdp);
        values = std::move(res.value);
        q = std::move(res.q);
    } else if (opts.source == "support" || opts.source == "sarsa" ||
               opts.source == "expectile") {
        if (opts.data.empty())
            throw std::invalid_argument("heatmap: --data required for source=" + opts.source);
        const Dataset ds = load_dataset(opts.data);
        DpResult res;
        if (opts.source == "support") {
            res = support_value_iteration(mdp,
                                          empirical_support(ds, mdp.n_states, mdp.n_actions));
        } else {
            const TabularPolicy mu = empirical_behavior(ds, mdp.n_states, mdp.n_actions);
            res = opts.source == "sarsa" ? policy_evaluation(mdp, mu)
                                         : expectile_fixed_point(mdp, mu, Tau(opts.tau));
        }
        values = std::move(res.value);
        q = std::move(res.q);
    } else {
        throw std::invalid_argument("heatmap: unknown --source '" + opts.source + "'");
    }

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    if (opts.per_action)
        emit_q_heatmap(q, mdp, dir / opts.out);
    else
        emit_heatmap(values, mdp, dir / opts.out);
    write_echo(dir, "heatmap", opts.to_json());

    Json summary;
    summary["csv"] = (dir / opts.out).string();
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// demo-expectile

struct DemoOptions {
    std::string taus = "0.1,0.5,0.9,0.99";
    int samples = 2000;
    long steps = 30000;
    double lr = 0.01;
    int width = 32;
    std::uint64_t seed = 0;
    std::string out = "expectile_demo.csv";
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["taus"] = taus;
        j["samples"] = samples;
        j["steps"] = steps;
        j["lr"] = lr;
        j["width"] = width;
        j["seed"] = seed;
        j["out"] = out;
        j["out_dir"] = out_dir;
        return j;
    }
    static DemoOptions from_json(const Json& j) {
        DemoOptions o;
        o.taus = j.at("taus").get<std::string>();
        o.samples = j.at("samples").get<int>();
        o.steps = j.at("steps").get<long>();
        o.lr = j.at("lr").get<double>();
        o.width = j.at("width").get<int>();
        o.seed = j.at("seed").get<std::uint64_t>();
        o.out = j.at("out").get<std::string>();
        return o;
    }
};

int run_demo(const DemoOptions& opts) {
    if (opts.samples < 2) throw std::invalid_argument("demo-expectile: --samples must be >= 2");
    const std::vector<double> taus = parse_double_list(opts.taus, "--taus");

    // x uniform on [0,1]; y | x uniform on [0, 0.2+0.8x], so the conditional
    // maximum grows with x and the fitted expectiles should fan out toward it
    Rng data_rng = make_rng(opts.seed, 0x64656d6fULL);  // "demo"
    std::vector<LabeledExample> pairs;
    for (int i = 0; i < opts.samples; ++i) {
        const double x = uniform01(data_rng);
        const double y = uniform01(data_rng) * (0.2 + 0.8 * x);
        pairs.push_back({Features{x}, y});
    }

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    std::ofstream out(dir / opts.out);
    if (!out) throw std::runtime_error("demo-expectile: cannot open output CSV");
    out << "tau,x,value\n";
    for (const double tau : taus) {
        ApproxShape shape;
        shape.kind = ApproxKind::Mlp;
        shape.n_inputs = 1;
        shape.n_outputs = 1;
        shape.hidden = {opts.width, opts.width};
        Rng fit_rng = make_rng(opts.seed, 0x666974ULL);  // "fit"
        const Approximator model = fit_conditional_expectile(
            pairs, Tau(tau), init_approximator(shape, opts.seed), opts.steps, opts.lr, fit_rng);
        for (int i = 0; i <= 50; ++i) {
            const double x = static_cast<double>(i) / 50.0;
            const double y = eval(model, std::span<const double>(&x, 1))[0];
            out << format_double(tau) << "," << format_double(x) << "," << format_double(y)
                << "\n";
        }
    }
    write_echo(dir, "demo-expectile", opts.to_json());

    Json summary;
    summary["csv"] = (dir / opts.out).string();
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneOptions {
    EnvOptions env;
    std::string checkpoint;
    std::string data;
    long env_steps = 5000;
    double eps = 0.1;
    std::uint64_t seed = 0;
    std::string out_dir = ".";

    Json to_json() const {
        Json j;
        j["env"] = env.to_json();
        j["checkpoint"] = checkpoint;
        j["data"] = data;
        j["env_steps"] = env_steps;
        j["eps"] = eps;
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        return j;
    }
    static FinetuneOptions from_json(const Json& j) {
        FinetuneOptions o;
        o.env = EnvOptions::from_json(j.at("env"));
        o.checkpoint = j.at("checkpoint").get<std::string>();
        o.data = j.at("data").get<std::string>();
        o.env_steps = j.at("env_steps").get<long>();
        o.eps = j.at("eps").get<double>();
        o.seed = j.at("seed").get<std::uint64_t>();
        return o;
    }
};

int run_finetune(const FinetuneOptions& opts) {
    if (opts.checkpoint.empty()) throw std::invalid_argument("finetune: --checkpoint is required");
    if (opts.data.empty()) throw std::invalid_argument("finetune: --data is required");
    const TabularMdp mdp = resolve_mdp(opts.env);
    auto [learner, config] = load_checkpoint(opts.checkpoint);
    const Dataset ds = load_dataset(opts.data);

    const double before = policy_return(mdp, extracted_greedy_policy(learner));
    Rng rng = make_rng(opts.seed, 0x6f6e6c696e65ULL);  // "online"
    auto [tuned, metrics] =
        finetune_online(std::move(learner), config, ds, mdp, opts.env_steps, opts.eps, rng);
    const double after = policy_return(mdp, extracted_greedy_policy(tuned));

    const std::filesystem::path dir = prepare_out_dir(opts.out_dir);
    save_checkpoint(tuned, config, dir / "checkpoint.json");
    save_metrics(metrics, dir / "metrics.jsonl");
    write_echo(dir, "finetune", opts.to_json());

    Json summary;
    summary["return_before"] = before;
    summary["return_after"] = after;
    summary["env_steps"] = opts.env_steps;
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int dispatch_echo(const Json& echo, const std::string& out_dir_override);

int run_rerun(const std::string& config_path, const std::string& out_dir_override) {
    std::ifstream in(config_path);
    if (!in) throw std::invalid_argument("rerun: cannot open " + config_path);
    Json echo;
    try {
        in >> echo;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("rerun: parse error in " + config_path + ": " + e.what());
    }
    return dispatch_echo(echo, out_dir_override);
}

int dispatch_echo(const Json& echo, const std::string& out_dir_override) {
    const std::string sub = echo.at("subcommand").get<std::string>();
    const Json& options = echo.at("options");
    const std::string out_dir = out_dir_override.empty()
                                    ? options.at("out_dir").get<std::string>()
                                    : out_dir_override;
    if (sub == "gen-data") {
        GenDataOptions o = GenDataOptions::from_json(options);
        o.out_dir = out_dir;
        return run_gen_data(o);
    }
    if (sub == "train") {
        TrainOptions o = TrainOptions::from_json(options);
        o.out_dir = out_dir;
        return run_train(o);
    }
    if (sub == "eval") {
        EvalOptions o = EvalOptions::from_json(options);
        o.out_dir = out_dir;
        return run_eval(o);
    }
    if (sub == "sweep-tau") {
        SweepOptions o = SweepOptions::from_json(options);
        o.out_dir = out_dir;
        return run_sweep(o);
    }
    if (sub == "heatmap") {
        HeatmapOptions o = HeatmapOptions::from_json(options);
        o.out_dir = out_dir;
        return run_heatmap(o);
    }
    if (sub == "demo-expectile") {
        DemoOptions o = DemoOptions::from_json(options);
        o.out_dir = out_dir;
        return run_demo(o);
    }
    if (sub == "finetune") {
        FinetuneOptions o = FinetuneOptions::from_json(options);
        o.out_dir = out_dir;
        return run_finetune(o);
    }
    throw std::invalid_argument("rerun: unknown subcommand '" + sub + "'");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"implicit Q-learning at tabular scale: dataset generation, training, "
                 "evaluation, sweeps, and oracles"};
    app.require_subcommand(1);

    GenDataOptions gen_opts;
    auto* gen = app.add_subcommand("gen-data", "generate an offline dataset from a policy mixture");
    add_env_options(gen, gen_opts.env);
    gen->add_option("--mix", gen_opts.mix, "policy mixture, e.g. optimal:1,uniform:99");
    gen->add_option("--max-steps", gen_opts.max_steps, "episode step cap");
    auto* gen_seed = gen->add_option("--seed", gen_opts.seed, "generator seed");
    gen->add_option("--out", gen_opts.out, "dataset filename (within --out-dir)");
    gen->add_option("--mdp-out", gen_opts.mdp_out, "also save the resolved MDP as JSON");
    gen->add_option("--out-dir", gen_opts.out_dir, "output directory");

    TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "train IQL or the one-step baseline offline");
    add_env_options(train, train_opts.env);
    train->add_option("--data", train_opts.data, "dataset file")->required();
    train->add_option("--algo", train_opts.algo, "iql | onestep");
    train->add_option("--kind", train_opts.kind, "approximator kind: table | linear | mlp");
    add_learner_options(train, train_opts.config, true);
    auto* train_double_q = train->get_option("--double-q");
    auto* train_seed = train->add_option("--seed", train_opts.config.seed, "training seed");
    train->add_option("--out-dir", train_opts.out_dir, "output directory");

    EvalOptions eval_opts;
    auto* evalc = app.add_subcommand("eval", "exact and Monte-Carlo return of a checkpoint");
    add_env_options(evalc, eval_opts.env);
    evalc->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint file")->required();
    evalc->add_option("--data", eval_opts.data, "dataset (enables the normalized return)");
    evalc->add_option("--episodes", eval_opts.episodes, "Monte-Carlo episode count");
    evalc->add_option("--max-steps", eval_opts.max_steps, "Monte-Carlo episode cap");
    auto* eval_seed = evalc->add_option("--seed", eval_opts.seed, "Monte-Carlo seed");
    evalc->add_option("--out-dir", eval_opts.out_dir, "output directory");

    SweepOptions sweep_opts;
    auto* sweep = app.add_subcommand("sweep-tau", "train across a tau grid and tabulate returns");
    add_env_options(sweep, sweep_opts.env);
    sweep->add_option("--data", sweep_opts.data, "dataset file")->required();
    sweep->add_option("--taus", sweep_opts.taus, "comma-separated tau list");
    sweep->add_option("--seeds", sweep_opts.seeds, "comma-separated seed list");
    sweep->add_option("--kind", sweep_opts.kind, "approximator kind");
    add_learner_options(sweep, sweep_opts.config, false);
    sweep->add_option("--out", sweep_opts.out, "CSV filename (within --out-dir)");
    sweep->add_option("--out-dir", sweep_opts.out_dir, "output directory");

    HeatmapOptions heat_opts;
    auto* heat = app.add_subcommand("heatmap", "per-cell state values as CSV");
    add_env_options(heat, heat_opts.env);
    heat->add_option("--source", heat_opts.source,
                     "checkpoint | optimal | support | sarsa | expectile");
    heat->add_option("--checkpoint", heat_opts.checkpoint, "checkpoint for source=checkpoint");
    heat->add_option("--data", heat_opts.data, "dataset for support/sarsa/expectile sources");
    heat->add_option("--tau", heat_opts.tau, "tau for source=expectile");
    heat->add_flag("--per-action", heat_opts.per_action, "emit Q values, one row per (state,action)");
    heat->add_option("--out", heat_opts.out, "CSV filename (within --out-dir)");
    heat->add_option("--out-dir", heat_opts.out_dir, "output directory");

    DemoOptions demo_opts;
    auto* demo = app.add_subcommand("demo-expectile",
                                    "fit conditional expectiles of a synthetic 2-D distribution");
    demo->add_option("--taus", demo_opts.taus, "comma-separated tau list");
    demo->add_option("--samples", demo_opts.samples, "synthetic sample count");
    demo->add_option("--steps", demo_opts.steps, "SGD steps per tau");
    demo->add_option("--lr", demo_opts.lr, "SGD learning rate");
    demo->add_option("--width", demo_opts.width, "mlp hidden width");
    auto* demo_seed = demo->add_option("--seed", demo_opts.seed, "data/fit seed");
    demo->add_option("--out", demo_opts.out, "CSV filename (within --out-dir)");
    demo->add_option("--out-dir", demo_opts.out_dir, "output directory");

    FinetuneOptions tune_opts;
    auto* tune = app.add_subcommand("finetune", "online finetuning from an offline checkpoint");
    add_env_options(tune, tune_opts.env);
    tune->add_option("--checkpoint", tune_opts.checkpoint, "offline checkpoint")->required();
    tune->add_option("--data", tune_opts.data, "offline dataset seeding the replay buffer")
        ->required();
    tune->add_option("--env-steps", tune_opts.env_steps, "online environment steps");
    tune->add_option("--eps", tune_opts.eps, "epsilon-greedy exploration rate");
    auto* tune_seed = tune->add_option("--seed", tune_opts.seed, "environment seed");
    tune->add_option("--out-dir", tune_opts.out_dir, "output directory");

    std::string rerun_config;
    std::string rerun_out_dir;
    auto* rerun = app.add_subcommand("rerun", "re-execute a run from its resolved-config echo");
    rerun->add_option("--config", rerun_config, "resolved-config echo file")->required();
    rerun->add_option("--out-dir", rerun_out_dir, "override the output directory");

    std::vector<const char*> argv;
    argv.push_back("iql");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) {
            if (gen_seed->count() == 0) gen_opts.seed = fallback_seed();
            return run_gen_data(gen_opts);
        }
        if (train->parsed()) {
            if (train_seed->count() == 0) train_opts.config.seed = fallback_seed();
            // clipped double-Q is the default for the parametric critic
            if (train_double_q->count() == 0 && train_opts.kind == "mlp")
                train_opts.config.double_q = true;
            return run_train(train_opts);
        }
        if (evalc->parsed()) {
            if (eval_seed->count() == 0) eval_opts.seed = fallback_seed();
            return run_eval(eval_opts);
        }
        if (sweep->parsed()) return run_sweep(sweep_opts);
        if (heat->parsed()) return run_heatmap(heat_opts);
        if (demo->parsed()) {
            if (demo_seed->count() == 0) demo_opts.seed = fallback_seed();
            return run_demo(demo_opts);
        }
        if (tune->parsed()) {
            if (tune_seed->count() == 0) tune_opts.seed = fallback_seed();
            return run_finetune(tune_opts);
        }
        if (rerun->parsed()) return run_rerun(rerun_config, rerun_out_dir);
        std::cerr << "error: usage: no subcommand given\n";
        return 1;
    } catch (const DivergenceError& e) {
        std::cerr << "error: divergence: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace iql
