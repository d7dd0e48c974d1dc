#include "iql/learner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "iql/errors.hpp"

namespace iql {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ splitmix64(tag));
}

double loss_of(double u, Tau tau, LossVariant variant) {
    return variant == LossVariant::Expectile ? asym_l2_loss(u, tau) : asym_l1_loss(u, tau);
}

double loss_grad_of(double u, Tau tau, LossVariant variant) {
    return variant == LossVariant::Expectile ? asym_l2_grad(u, tau) : asym_l1_grad(u, tau);
}

void check_batch(const LearnerState& learner, std::span<const Transition> batch,
                 const char* where) {
    if (batch.empty()) throw std::invalid_argument(std::string(where) + ": empty batch");
    for (const Transition& tr : batch) {
        if (tr.state < 0 || tr.state >= learner.n_states || tr.action < 0 ||
            tr.action >= learner.n_actions || tr.next_state < 0 ||
            tr.next_state >= learner.n_states)
            throw std::invalid_argument(std::string(where) + ": transition index out of range");
    }
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace

void IqlConfig::check() const {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("config: tau must be in (0,1)");
    if (!(beta >= 0.0)) throw std::invalid_argument("config: beta must be nonnegative");
    if (!(lr_v > 0.0 && lr_q > 0.0 && lr_pi > 0.0))
        throw std::invalid_argument("config: learning rates must be positive");
    if (!(polyak_rate > 0.0 && polyak_rate <= 1.0))
        throw std::invalid_argument("config: polyak_rate must be in (0,1]");
    if (td_steps < 0 || policy_steps < 0)
        throw std::invalid_argument("config: step counts must be nonnegative");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (!(adv_clip > 0.0)) throw std::invalid_argument("config: adv_clip must be positive");
    if (mlp_width < 1) throw std::invalid_argument("config: mlp_width must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
}

nlohmann::ordered_json IqlConfig::to_json() const {
    nlohmann::ordered_json j;
    j["tau"] = tau;
    j["beta"] = beta;
    j["lr_v"] = lr_v;
    j["lr_q"] = lr_q;
    j["lr_pi"] = lr_pi;
    j["polyak_rate"] = polyak_rate;
    j["td_steps"] = td_steps;
    j["policy_steps"] = policy_steps;
    j["batch_size"] = batch_size;
    j["double_q"] = double_q;
    j["loss_variant"] = loss_variant == LossVariant::Expectile ? "expectile" : "quantile";
    j["adv_clip"] = adv_clip;
    j["kind"] = kind == ApproxKind::Table ? "table"
                : kind == ApproxKind::Linear ? "linear"
                                             : "mlp";
    j["mlp_width"] = mlp_width;
    j["seed"] = seed;
    j["eval_interval"] = eval_interval;
    return j;
}

IqlConfig IqlConfig::from_json(const nlohmann::ordered_json& j) {
    IqlConfig c;
    c.tau = j.at("tau").get<double>();
    c.beta = j.at("beta").get<double>();
    c.lr_v = j.at("lr_v").get<double>();
    c.lr_q = j.at("lr_q").get<double>();
    c.lr_pi = j.at("lr_pi").get<double>();
    c.polyak_rate = j.at("polyak_rate").get<double>();
    c.td_steps = j.at("td_steps").get<long>();
    c.policy_steps = j.at("policy_steps").get<long>();
    c.batch_size = j.at("batch_size").get<int>();
    c.double_q = j.at("double_q").get<bool>();
    c.loss_variant = j.at("loss_variant").get<std::string>() == "quantile"
                         ? LossVariant::Quantile
                         : LossVariant::Expectile;
    c.adv_clip = j.at("adv_clip").get<double>();
    const std::string kind = j.at("kind").get<std::string>();
    c.kind = kind == "table" ? ApproxKind::Table
             : kind == "linear" ? ApproxKind::Linear
                                : ApproxKind::Mlp;
    c.mlp_width = j.at("mlp_width").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_interval = j.at("eval_interval").get<long>();
    c.check();
    return c;
}

double LearnerState::v_at(int s) const {
    if (v_model.shape.kind == ApproxKind::Table)
        return v_model.params[static_cast<std::size_t>(s)];
    return eval(v_model, s)[0];
}

double LearnerState::q_at(const Approximator& q_model, int s, int a) const {
    if (recorder) recorder->record(s, a);
    if (q_model.shape.kind == ApproxKind::Table)
        return q_model.params[static_cast<std::size_t>(s) * n_actions + a];
    return eval(q_model, s)[static_cast<std::size_t>(a)];
}

double LearnerState::target_q_min(int s, int a) const {
    double q = q_at(q1_target, s, a);
    if (q2_target) q = std::min(q, q_at(*q2_target, s, a));
    return q;
}

LearnerState init_learner(const IqlConfig& config, int n_states, int n_actions, double discount) {
    config.check();
    if (n_states < 1 || n_actions < 1)
        throw std::invalid_argument("init_learner: arities must be positive");

    auto shape_for = [&](int n_outputs) {
        ApproxShape shape;
        shape.kind = config.kind;
        shape.n_inputs = n_states;
        shape.n_outputs = n_outputs;
        if (config.kind == ApproxKind::Mlp)
            shape.hidden = {config.mlp_width, config.mlp_width};
        return shape;
    };

    LearnerState learner;
    learner.n_states = n_states;
    learner.n_actions = n_actions;
    learner.discount = discount;
    learner.v_model = init_approximator(shape_for(1), derive_seed(config.seed, 1));
    learner.q1 = init_approximator(shape_for(n_actions), derive_seed(config.seed, 2));
    learner.q1_target = learner.q1;
    if (config.double_q) {
        learner.q2 = init_approximator(shape_for(n_actions), derive_seed(config.seed, 3));
        learner.q2_target = learner.q2;
    }
    learner.pi_model = init_approximator(shape_for(n_actions), derive_seed(config.seed, 4));

    learner.opt_v = init_optimizer(learner.v_model, config.lr_v);
    learner.opt_q1 = init_optimizer(learner.q1, config.lr_q);
    if (learner.q2) learner.opt_q2 = init_optimizer(*learner.q2, config.lr_q);
    learner.opt_pi = config.policy_steps > 0
                         ? init_optimizer(learner.pi_model, config.lr_pi, LrSchedule::Cosine,
                                          config.policy_steps)
                         : init_optimizer(learner.pi_model, config.lr_pi);

    learner.td_rng = make_rng(config.seed, 10);
    learner.pi_rng = make_rng(config.seed, 11);
    return learner;
}

double td_target(int next_state, double reward, bool done, const LearnerState& learner,
                 double discount) {
    if (done) return reward;
    return reward + discount * learner.v_at(next_state);
}

LossGrad value_loss_grad(const LearnerState& learner, std::span<const Transition> batch,
                         const IqlConfig& config) {
    check_batch(learner, batch, "value_loss_grad");
    const Tau tau(config.tau);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    LossGrad out;
    out.grad.assign(learner.v_model.params.size(), 0.0);
    const bool tabular = learner.v_model.shape.kind == ApproxKind::Table;
    for (const Transition& tr : batch) {
        const double u = learner.target_q_min(tr.state, tr.action) - learner.v_at(tr.state);
        out.loss += loss_of(u, tau, config.loss_variant) * inv_b;
        const double cot = -loss_grad_of(u, tau, config.loss_variant) * inv_b;
        if (tabular)
            out.grad[static_cast<std::size_t>(tr.state)] += cot;
        else
            grad_accumulate(learner.v_model, tr.state, std::span<const double>(&cot, 1), 1.0,
                            out.grad);
    }
    return out;
}

LossGrad q_loss_grad(const LearnerState& learner, const Approximator& q_model,
                     std::span<const Transition> batch) {
    check_batch(learner, batch, "q_loss_grad");
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    LossGrad out;
    out.grad.assign(q_model.params.size(), 0.0);
    const bool tabular = q_model.shape.kind == ApproxKind::Table;
    std::vector<double> cot(static_cast<std::size_t>(learner.n_actions), 0.0);
    for (const Transition& tr : batch) {
        const double y = td_target(tr.next_state, tr.reward, tr.done, learner, learner.discount);
        const double residual = learner.q_at(q_model, tr.state, tr.action) - y;
        out.loss += residual * residual * inv_b;
        const double g = 2.0 * residual * inv_b;
        if (tabular) {
            out.grad[static_cast<std::size_t>(tr.state) * learner.n_actions + tr.action] += g;
        } else {
            cot[static_cast<std::size_t>(tr.action)] = g;
            grad_accumulate(q_model, tr.state, cot, 1.0, out.grad);
            cot[static_cast<std::size_t>(tr.action)] = 0.0;
        }
    }
    return out;
}

LossGrad sarsa_loss_grad(const LearnerState& learner, const Approximator& q_model,
                         const Approximator& q_target_model, std::span<const Transition> batch) {
    check_batch(learner, batch, "sarsa_loss_grad");

    LossGrad out;
    out.grad.assign(q_model.params.size(), 0.0);
    const bool tabular = q_model.shape.kind == ApproxKind::Table;
    std::vector<double> cot(static_cast<std::size_t>(learner.n_actions), 0.0);
    long used = 0;
    for (const Transition& tr : batch) {
        if (!tr.done && !tr.next_action.has_value()) continue;  // truncated episode tail
        ++used;
    }
    if (used == 0) return out;
    const double inv_b = 1.0 / static_cast<double>(used);
    for (const Transition& tr : batch) {
        double y;
        if (tr.done)
            y = tr.reward;
        else if (tr.next_action.has_value())
            y = tr.reward +
                learner.discount * learner.q_at(q_target_model, tr.next_state, *tr.next_action);
        else
            continue;
        const double residual = learner.q_at(q_model, tr.state, tr.action) - y;
        out.loss += residual * residual * inv_b;
        const double g = 2.0 * residual * inv_b;
        if (tabular) {
            out.grad[static_cast<std::size_t>(tr.state) * learner.n_actions + tr.action] += g;
        } else {
            cot[static_cast<std::size_t>(tr.action)] = g;
            grad_accumulate(q_model, tr.state, cot, 1.0, out.grad);
            cot[static_cast<std::size_t>(tr.action)] = 0.0;
        }
    }
    return out;
}

LossGrad policy_loss_grad(const LearnerState& learner, std::span<const Transition> batch,
                          const IqlConfig& config) {
    check_batch(learner, batch, "policy_loss_grad");
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    LossGrad out;
    out.grad.assign(learner.pi_model.params.size(), 0.0);
    const int n_actions = learner.n_actions;
    const bool tabular = learner.pi_model.shape.kind == ApproxKind::Table;
    std::vector<double> logits_buf;
    std::vector<double> probs(static_cast<std::size_t>(n_actions), 0.0);
    std::vector<double> cot(static_cast<std::size_t>(n_actions), 0.0);
    for (const Transition& tr : batch) {
        const double adv = learner.target_q_min(tr.state, tr.action) - learner.v_at(tr.state);
        if (!std::isfinite(adv))
            throw DivergenceError(learner.policy_updates, "non-finite advantage");
        const double w = std::min(std::exp(config.beta * adv), config.adv_clip);
        if (!std::isfinite(w)) throw DivergenceError(learner.policy_updates, "non-finite weight");
        out.mean_advantage += adv * inv_b;

        std::span<const double> logits;
        if (tabular) {
            logits = {learner.pi_model.params.data() +
                          static_cast<std::size_t>(tr.state) * n_actions,
                      static_cast<std::size_t>(n_actions)};
        } else {
            logits_buf = eval(learner.pi_model, tr.state);
            logits = logits_buf;
        }
        double max_logit = logits[0];
        for (int a = 1; a < n_actions; ++a)
            max_logit = std::max(max_logit, logits[static_cast<std::size_t>(a)]);
        double z = 0.0;
        for (int a = 0; a < n_actions; ++a)
            z += std::exp(logits[static_cast<std::size_t>(a)] - max_logit);
        const double log_z = max_logit + std::log(z);
        out.loss -= w * (logits[static_cast<std::size_t>(tr.action)] - log_z) * inv_b;

        for (int a = 0; a < n_actions; ++a) {
            probs[static_cast<std::size_t>(a)] =
                std::exp(logits[static_cast<std::size_t>(a)] - log_z);
            cot[static_cast<std::size_t>(a)] =
                w * (probs[static_cast<std::size_t>(a)] - (a == tr.action ? 1.0 : 0.0)) * inv_b;
        }
        if (tabular) {
            for (int a = 0; a < n_actions; ++a)
                out.grad[static_cast<std::size_t>(tr.state) * n_actions + a] +=
                    cot[static_cast<std::size_t>(a)];
        } else {
            grad_accumulate(learner.pi_model, tr.state, cot, 1.0, out.grad);
        }
    }
    return out;
}

double update_value(LearnerState& learner, std::span<const Transition> batch,
                    const IqlConfig& config) {
    const LossGrad lg = value_loss_grad(learner, batch, config);
    if (!std::isfinite(lg.loss)) {
        throw DivergenceError(learner.td_updates,
                              "value loss diverged; config: " + config.to_json().dump());
    }
    apply_update(learner.v_model, learner.opt_v, lg.grad);
    return lg.loss;
}

double update_q(LearnerState& learner, std::span<const Transition> batch,
                const IqlConfig& config) {
    const LossGrad lg1 = q_loss_grad(learner, learner.q1, batch);
    double loss = lg1.loss;
    if (!std::isfinite(loss))
        throw DivergenceError(learner.td_updates,
                              "q loss diverged; config: " + config.to_json().dump());
    apply_update(learner.q1, learner.opt_q1, lg1.grad);
    if (learner.q2) {
        const LossGrad lg2 = q_loss_grad(learner, *learner.q2, batch);
        if (!std::isfinite(lg2.loss))
            throw DivergenceError(learner.td_updates,
                                  "q loss diverged; config: " + config.to_json().dump());
        apply_update(*learner.q2, *learner.opt_q2, lg2.grad);
        loss = 0.5 * (loss + lg2.loss);
    }
    polyak_update(learner.q1_target, learner.q1, config.polyak_rate);
    if (learner.q2) polyak_update(*learner.q2_target, *learner.q2, config.polyak_rate);
    return loss;
}

double update_q_sarsa(LearnerState& learner, std::span<const Transition> batch,
                      const IqlConfig& config) {
    const LossGrad lg1 = sarsa_loss_grad(learner, learner.q1, learner.q1_target, batch);
    double loss = lg1.loss;
    if (!std::isfinite(loss))
        throw DivergenceError(learner.td_updates,
                              "sarsa loss diverged; config: " + config.to_json().dump());
    apply_update(learner.q1, learner.opt_q1, lg1.grad);
    if (learner.q2) {
        const LossGrad lg2 = sarsa_loss_grad(learner, *learner.q2, *learner.q2_target, batch);
        if (!std::isfinite(lg2.loss))
            throw DivergenceError(learner.td_updates,
                                  "sarsa loss diverged; config: " + config.to_json().dump());
        apply_update(*learner.q2, *learner.opt_q2, lg2.grad);
        loss = 0.5 * (loss + lg2.loss);
    }
    polyak_update(learner.q1_target, learner.q1, config.polyak_rate);
    if (learner.q2) polyak_update(*learner.q2_target, *learner.q2, config.polyak_rate);
    return loss;
}

double update_policy(LearnerState& learner, std::span<const Transition> batch,
                     const IqlConfig& config) {
    const LossGrad lg = policy_loss_grad(learner, batch, config);
    if (!std::isfinite(lg.loss))
        throw DivergenceError(learner.policy_updates,
                              "policy loss diverged; config: " + config.to_json().dump());
    apply_update(learner.pi_model, learner.opt_pi, lg.grad);
    return lg.loss;
}

void save_metrics(const Metrics& metrics, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_metrics: cannot open " + path.string());
    for (const MetricsRecord& r : metrics.records) {
        nlohmann::ordered_json j;
        j["step"] = r.step;
        j["phase"] = r.phase;
        j["value_loss"] = r.value_loss;
        j["q_loss"] = r.q_loss;
        j["policy_loss"] = r.policy_loss;
        j["mean_advantage"] = r.mean_advantage;
        j["exact_return"] = r.exact_return;
        out << j.dump() << "\n";
    }
}

namespace {

int greedy_action(const LearnerState& learner, int s) {
    if (learner.pi_model.shape.kind == ApproxKind::Table) {
        const double* row =
            learner.pi_model.params.data() + static_cast<std::size_t>(s) * learner.n_actions;
        int best = 0;
        for (int a = 1; a < learner.n_actions; ++a)
            if (row[a] > row[best]) best = a;
        return best;
    }
    const std::vector<double> logits = eval(learner.pi_model, s);
    int best = 0;
    for (int a = 1; a < learner.n_actions; ++a)
        if (logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(best)]) best = a;
    return best;
}

}  // namespace

TabularPolicy extracted_greedy_policy(const LearnerState& learner) {
    TabularPolicy pi;
    pi.n_states = learner.n_states;
    pi.n_actions = learner.n_actions;
    pi.probs.assign(static_cast<std::size_t>(learner.n_states) * learner.n_actions, 0.0);
    for (int s = 0; s < learner.n_states; ++s) pi.prob(s, greedy_action(learner, s)) = 1.0;
    return pi;
}

TabularPolicy extracted_policy(const LearnerState& learner) {
    TabularPolicy pi;
    pi.n_states = learner.n_states;
    pi.n_actions = learner.n_actions;
    pi.probs.assign(static_cast<std::size_t>(learner.n_states) * learner.n_actions, 0.0);
    for (int s = 0; s < learner.n_states; ++s) {
        const std::vector<double> logits = eval(learner.pi_model, s);
        double max_logit = logits[0];
        for (double l : logits) max_logit = std::max(max_logit, l);
        double z = 0.0;
        for (int a = 0; a < learner.n_actions; ++a)
            z += std::exp(logits[static_cast<std::size_t>(a)] - max_logit);
        for (int a = 0; a < learner.n_actions; ++a)
            pi.prob(s, a) = std::exp(logits[static_cast<std::size_t>(a)] - max_logit) / z;
    }
    return pi;
}

namespace {

void check_dataset_for(const LearnerState& learner, const Dataset& ds) {
    if (ds.transitions.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const Transition& tr : ds.transitions) {
        if (tr.state < 0 || tr.state >= learner.n_states || tr.action < 0 ||
            tr.action >= learner.n_actions || tr.next_state < 0 ||
            tr.next_state >= learner.n_states)
            throw std::invalid_argument("train: dataset transition out of range");
    }
}

struct PhaseLog {
    double value_loss = 0.0;
    double q_loss = 0.0;
    double policy_loss = 0.0;
    double mean_advantage = 0.0;
};

void record_metrics(Metrics& metrics, const LearnerState& learner, const TabularMdp& mdp,
                    const PhaseLog& log, long step, const std::string& phase,
                    const Timer& timer) {
    MetricsRecord r;
    r.step = step;
    r.phase = phase;
    r.value_loss = log.value_loss;
    r.q_loss = log.q_loss;
    r.policy_loss = log.policy_loss;
    r.mean_advantage = log.mean_advantage;
    r.exact_return = policy_return(mdp, extracted_greedy_policy(learner));
    r.wall_seconds = timer.seconds();
    metrics.records.push_back(r);
}

std::pair<LearnerState, Metrics> run_offline(const IqlConfig& config, const Dataset& ds,
                                             const TabularMdp& eval_mdp, bool sarsa_baseline,
                                             std::shared_ptr<QueryRecorder> recorder) {
    config.check();
    LearnerState learner =
        init_learner(config, eval_mdp.n_states, eval_mdp.n_actions, eval_mdp.discount);
    learner.recorder = std::move(recorder);
    check_dataset_for(learner, ds);

    // The baseline's value head is a plain mean fit; it exists only to give
    // the extraction step its advantage baseline.
    IqlConfig value_config = config;
    if (sarsa_baseline) value_config.tau = 0.5;

    Metrics metrics;
    Timer timer;
    PhaseLog log;
    for (long t = 0; t < config.td_steps; ++t) {
        const std::vector<Transition> batch =
            sample_batch(ds, config.batch_size, learner.td_rng);
        log.value_loss = update_value(learner, batch, value_config);
        log.q_loss = sarsa_baseline ? update_q_sarsa(learner, batch, config)
                                    : update_q(learner, batch, config);
        ++learner.td_updates;
        if ((t + 1) % config.eval_interval == 0 || t + 1 == config.td_steps)
            record_metrics(metrics, learner, eval_mdp, log, t + 1, "td", timer);
    }
    for (long t = 0; t < config.policy_steps; ++t) {
        const std::vector<Transition> batch =
            sample_batch(ds, config.batch_size, learner.pi_rng);
        const LossGrad lg = policy_loss_grad(learner, batch, config);
        if (!std::isfinite(lg.loss))
            throw DivergenceError(learner.policy_updates,
                                  "policy loss diverged; config: " + config.to_json().dump());
        apply_update(learner.pi_model, learner.opt_pi, lg.grad);
        log.policy_loss = lg.loss;
        log.mean_advantage = lg.mean_advantage;
        ++learner.policy_updates;
        if ((t + 1) % config.eval_interval == 0 || t + 1 == config.policy_steps)
            record_metrics(metrics, learner, eval_mdp, log, t + 1, "policy", timer);
    }
    return {std::move(learner), std::move(metrics)};
}

}  // namespace

std::pair<LearnerState, Metrics> train_offline(const IqlConfig& config, const Dataset& ds,
                                               const TabularMdp& eval_mdp) {
    return run_offline(config, ds, eval_mdp, false, nullptr);
}

std::pair<LearnerState, Metrics> train_offline_instrumented(
    const IqlConfig& config, const Dataset& ds, const TabularMdp& eval_mdp,
    std::shared_ptr<QueryRecorder> recorder) {
    return run_offline(config, ds, eval_mdp, false, std::move(recorder));
}

std::pair<LearnerState, Metrics> train_onestep_baseline(const IqlConfig& config,
                                                        const Dataset& ds,
                                                        const TabularMdp& eval_mdp) {
    return run_offline(config, ds, eval_mdp, true, nullptr);
}

std::pair<LearnerState, Metrics> finetune_online(LearnerState learner, const IqlConfig& config,
                                                 const Dataset& replay_init,
                                                 const TabularMdp& mdp, long env_steps,
                                                 double exploration_eps, Rng& rng,
                                                 Dataset* final_buffer) {
    config.check();
    if (env_steps < 1) throw std::invalid_argument("finetune_online: env_steps must be >= 1");
    if (!(exploration_eps >= 0.0 && exploration_eps <= 1.0))
        throw std::invalid_argument("finetune_online: exploration_eps must be in [0,1]");
    if (learner.n_states != mdp.n_states || learner.n_actions != mdp.n_actions)
        throw std::invalid_argument("finetune_online: learner/mdp arity mismatch");
    check_dataset_for(learner, replay_init);

    // Continuing the actor's cosine schedule past its horizon would freeze
    // the policy at rate 0; stretch the horizon over the online phase.
    if (learner.opt_pi.schedule == LrSchedule::Cosine) learner.opt_pi.horizon += env_steps;

    Dataset buffer = replay_init;
    const int episode_cap = replay_init.meta.max_steps >= 1 ? replay_init.meta.max_steps : 100;

    Metrics metrics;
    Timer timer;
    PhaseLog log;

    int state = sample_categorical(mdp.initial_dist, rng);
    int episode_len = 0;
    long prev_index = -1;  // previous transition of the current episode
    for (long t = 0; t < env_steps; ++t) {
        if (mdp.is_terminal(state)) {
            state = sample_categorical(mdp.initial_dist, rng);
            episode_len = 0;
            prev_index = -1;
        }
        int action = greedy_action(learner, state);
        if (exploration_eps > 0.0 && uniform01(rng) < exploration_eps)
            action = uniform_int(rng, mdp.n_actions);
        const StepResult r = step(mdp, state, action, rng);

        if (episode_len == 0) buffer.episode_starts.push_back(buffer.transitions.size());
        if (prev_index >= 0)
            buffer.transitions[static_cast<std::size_t>(prev_index)].next_action = action;
        Transition tr;
        tr.state = state;
        tr.action = action;
        tr.reward = r.reward;
        tr.next_state = r.next_state;
        tr.done = r.done;
        buffer.transitions.push_back(tr);
        prev_index = static_cast<long>(buffer.transitions.size()) - 1;
        ++episode_len;
        ++learner.env_steps;

        if (r.done || episode_len >= episode_cap) {
            state = sample_categorical(mdp.initial_dist, rng);
            episode_len = 0;
            prev_index = -1;
        } else {
            state = r.next_state;
        }

        // exactly one gradient cycle per environment step
        const std::vector<Transition> batch =
            sample_batch(buffer, config.batch_size, learner.td_rng);
        log.value_loss = update_value(learner, batch, config);
        log.q_loss = update_q(learner, batch, config);
        ++learner.td_updates;
        const std::vector<Transition> pi_batch =
            sample_batch(buffer, config.batch_size, learner.pi_rng);
        const LossGrad lg = policy_loss_grad(learner, pi_batch, config);
        if (!std::isfinite(lg.loss))
            throw DivergenceError(learner.policy_updates,
                                  "policy loss diverged; config: " + config.to_json().dump());
        apply_update(learner.pi_model, learner.opt_pi, lg.grad);
        log.policy_loss = lg.loss;
        log.mean_advantage = lg.mean_advantage;
        ++learner.policy_updates;

        if ((t + 1) % config.eval_interval == 0 || t + 1 == env_steps)
            record_metrics(metrics, learner, mdp, log, t + 1, "online", timer);
    }
    if (final_buffer) *final_buffer = std::move(buffer);
    return {std::move(learner), std::move(metrics)};
}

std::vector<TauSweepRow> sweep_tau(const IqlConfig& config_template, std::span<const double> taus,
                                   const Dataset& ds, const TabularMdp& mdp,
                                   std::span<const std::uint64_t> seeds) {
    if (taus.empty() || seeds.empty())
        throw std::invalid_argument("sweep_tau: taus and seeds must be nonempty");
    std::vector<TauSweepRow> rows;
    for (const double tau : taus) {
        std::vector<double> returns;
        for (const std::uint64_t seed : seeds) {
            IqlConfig config = config_template;
            config.tau = tau;
            config.seed = seed;
            const auto [learner, metrics] = train_offline(config, ds, mdp);
            // the sweep scores the extracted policy itself, not its argmax
            returns.push_back(policy_return(mdp, extracted_policy(learner)));
        }
        TauSweepRow row;
        row.tau = tau;
        const bool all_equal =
            std::all_of(returns.begin(), returns.end(),
                        [&](double r) { return r == returns.front(); });
        if (all_equal) {
            row.mean_return = returns.front();  // keeps duplicate-seed std exactly zero
        } else {
            for (double r : returns) row.mean_return += r;
            row.mean_return /= static_cast<double>(returns.size());
            double ss = 0.0;
            for (double r : returns)
                ss += (r - row.mean_return) * (r - row.mean_return);
            row.std_return = std::sqrt(ss / static_cast<double>(returns.size() - 1));
        }
        rows.push_back(row);
    }
    return rows;
}

namespace {

std::string rng_to_string(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

Rng rng_from_string(const std::string& s) {
    Rng rng;
    std::istringstream in(s);
    in >> rng;
    if (in.fail()) throw std::runtime_error("checkpoint: malformed rng state");
    return rng;
}

}  // namespace

void save_checkpoint(const LearnerState& learner, const IqlConfig& config,
                     const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["format"] = "iql-checkpoint-v1";
    j["config"] = config.to_json();
    j["env"] = {{"n_states", learner.n_states},
                {"n_actions", learner.n_actions},
                {"discount", learner.discount}};
    j["counters"] = {{"td_updates", learner.td_updates},
                     {"policy_updates", learner.policy_updates},
                     {"env_steps", learner.env_steps}};
    j["rng"] = {{"td", rng_to_string(learner.td_rng)}, {"pi", rng_to_string(learner.pi_rng)}};
    nlohmann::ordered_json models;
    models["v"] = approximator_to_json(learner.v_model);
    models["q1"] = approximator_to_json(learner.q1);
    models["q1_target"] = approximator_to_json(learner.q1_target);
    models["q2"] = learner.q2 ? approximator_to_json(*learner.q2) : nlohmann::ordered_json();
    models["q2_target"] =
        learner.q2_target ? approximator_to_json(*learner.q2_target) : nlohmann::ordered_json();
    models["pi"] = approximator_to_json(learner.pi_model);
    j["models"] = std::move(models);
    nlohmann::ordered_json opts;
    opts["v"] = optimizer_to_json(learner.opt_v);
    opts["q1"] = optimizer_to_json(learner.opt_q1);
    opts["q2"] = learner.opt_q2 ? optimizer_to_json(*learner.opt_q2) : nlohmann::ordered_json();
    opts["pi"] = optimizer_to_json(learner.opt_pi);
    j["optimizers"] = std::move(opts);

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    out << j.dump(2) << "\n";
}

std::pair<LearnerState, IqlConfig> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("load_checkpoint: parse error in " + path.string() + ": " +
                                 e.what());
    }
    if (j.value("format", "") != "iql-checkpoint-v1")
        throw std::runtime_error("load_checkpoint: unrecognized format in " + path.string());

    const IqlConfig config = IqlConfig::from_json(j.at("config"));
    LearnerState learner;
    learner.n_states = j.at("env").at("n_states").get<int>();
    learner.n_actions = j.at("env").at("n_actions").get<int>();
    learner.discount = j.at("env").at("discount").get<double>();
    learner.td_updates = j.at("counters").at("td_updates").get<long>();
    learner.policy_updates = j.at("counters").at("policy_updates").get<long>();
    learner.env_steps = j.at("counters").at("env_steps").get<long>();
    learner.td_rng = rng_from_string(j.at("rng").at("td").get<std::string>());
    learner.pi_rng = rng_from_string(j.at("rng").at("pi").get<std::string>());

    const auto& models = j.at("models");
    learner.v_model = approximator_from_json(models.at("v"));
    learner.q1 = approximator_from_json(models.at("q1"));
    learner.q1_target = approximator_from_json(models.at("q1_target"));
    if (!models.at("q2").is_null()) {
        learner.q2 = approximator_from_json(models.at("q2"));
        learner.q2_target = approximator_from_json(models.at("q2_target"));
    }
    learner.pi_model = approximator_from_json(models.at("pi"));

    const auto& opts = j.at("optimizers");
    learner.opt_v = optimizer_from_json(opts.at("v"));
    learner.opt_q1 = optimizer_from_json(opts.at("q1"));
    if (!opts.at("q2").is_null()) learner.opt_q2 = optimizer_from_json(opts.at("q2"));
    learner.opt_pi = optimizer_from_json(opts.at("pi"));
    return {std::move(learner), config};
}

}  // namespace iql
