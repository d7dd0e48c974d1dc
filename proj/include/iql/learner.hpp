#pragma once

#include <memory>
#include <optional>
#include <set>
#include <utility>

#include "iql/approx.hpp"
#include "iql/data.hpp"
#include "iql/expectile.hpp"
#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

namespace iql {

enum class LossVariant { Expectile, Quantile };

/// Training configuration. Defaults: learning rate 3e-4 and soft-update rate
/// 0.005 everywhere, exponentiated advantages clipped at 100, tau 0.95 for
/// the maze protocol.
struct IqlConfig {
    double tau = 0.95;
    double beta = 10.0;
    double lr_v = 3e-4;
    double lr_q = 3e-4;
    double lr_pi = 3e-4;
    double polyak_rate = 0.005;
    long td_steps = 30000;
    long policy_steps = 10000;
    int batch_size = 256;
    bool double_q = false;
    LossVariant loss_variant = LossVariant::Expectile;
    double adv_clip = 100.0;
    ApproxKind kind = ApproxKind::Table;
    int mlp_width = 256;
    std::uint64_t seed = 0;
    long eval_interval = 1000;

    void check() const;
    nlohmann::ordered_json to_json() const;
    static IqlConfig from_json(const nlohmann::ordered_json& j);
};

/// Records every (s,a) at which a Q model is evaluated during training.
/// Used to certify that training never queries out-of-sample actions.
struct QueryRecorder {
    std::set<std::pair<int, int>> queried;
    void record(int s, int a) { queried.emplace(s, a); }
};

/// All trainable state: value model, one or two Q models with their targets,
/// policy logits, per-model optimizers, step counters, and the two batch
/// streams (TD and policy draws are separate so extraction order cannot
/// perturb value training).
struct LearnerState {
    int n_states = 0;
    int n_actions = 0;
    double discount = 0.0;

    Approximator v_model;
    Approximator q1, q1_target;
    std::optional<Approximator> q2, q2_target;
    Approximator pi_model;  // action logits

    OptimizerState opt_v, opt_q1, opt_pi;
    std::optional<OptimizerState> opt_q2;

    long td_updates = 0;
    long policy_updates = 0;
    long env_steps = 0;

    Rng td_rng, pi_rng;

    std::shared_ptr<QueryRecorder> recorder;  // optional instrumentation

    double v_at(int s) const;
    double q_at(const Approximator& q_model, int s, int a) const;
    /// min over target networks at (s,a); the conservative regression target.
    double target_q_min(int s, int a) const;
};

LearnerState init_learner(const IqlConfig& config, int n_states, int n_actions, double discount);

/// reward if done, else reward + discount * V(next_state).
double td_target(int next_state, double reward, bool done, const LearnerState& learner,
                 double discount);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
    double mean_advantage = 0.0;  // policy loss only
};

/// Loss and parameter gradient of the expectile value objective
/// mean L2_tau(Q_target(s,a) - V(s)) over the batch (or the quantile
/// variant). Pure; exposed for gradient verification.
LossGrad value_loss_grad(const LearnerState& learner, std::span<const Transition> batch,
                         const IqlConfig& config);

/// Loss/gradient of the TD regression of one Q model onto r + gamma*V(s').
LossGrad q_loss_grad(const LearnerState& learner, const Approximator& q_model,
                     std::span<const Transition> batch);

/// Loss/gradient of the SARSA regression onto r + gamma*Q_target(s',a').
/// Transitions without a stored next_action (truncated episode tails) are
/// skipped.
LossGrad sarsa_loss_grad(const LearnerState& learner, const Approximator& q_model,
                         const Approximator& q_target_model, std::span<const Transition> batch);

/// Loss/gradient of advantage-weighted log-likelihood, weights
/// min(exp(beta*(Q_target_min - V)), adv_clip).
LossGrad policy_loss_grad(const LearnerState& learner, std::span<const Transition> batch,
                          const IqlConfig& config);

/// One gradient step each; update_q and update_q_sarsa also soft-update the
/// target networks. All return the batch loss.
double update_value(LearnerState& learner, std::span<const Transition> batch,
                    const IqlConfig& config);
double update_q(LearnerState& learner, std::span<const Transition> batch,
                const IqlConfig& config);
double update_q_sarsa(LearnerState& learner, std::span<const Transition> batch,
                      const IqlConfig& config);
double update_policy(LearnerState& learner, std::span<const Transition> batch,
                     const IqlConfig& config);

struct MetricsRecord {
    long step = 0;
    std::string phase;
    double value_loss = 0.0;
    double q_loss = 0.0;
    double policy_loss = 0.0;
    double mean_advantage = 0.0;
    double exact_return = 0.0;
    double wall_seconds = 0.0;  // kept in memory only; not serialized
};

struct Metrics {
    std::vector<MetricsRecord> records;
};

/// JSON-Lines, one record per logging interval. Wall-clock time is omitted
/// so identical runs emit identical bytes.
void save_metrics(const Metrics& metrics, const std::filesystem::path& path);

/// Deterministic greedy policy from the learned logits (lowest index wins
/// ties). Never touches the Q models.
TabularPolicy extracted_greedy_policy(const LearnerState& learner);

/// The extracted policy itself: the softmax of the learned logits.
TabularPolicy extracted_policy(const LearnerState& learner);

/// Algorithm: td_steps iterations of (value step; Q step; soft target
/// update), then policy_steps iterations of advantage-weighted extraction.
/// The eval MDP is used only for periodic exact policy returns.
std::pair<LearnerState, Metrics> train_offline(const IqlConfig& config, const Dataset& ds,
                                               const TabularMdp& eval_mdp);

/// train_offline with every Q evaluation logged into the recorder.
std::pair<LearnerState, Metrics> train_offline_instrumented(
    const IqlConfig& config, const Dataset& ds, const TabularMdp& eval_mdp,
    std::shared_ptr<QueryRecorder> recorder);

/// One-step baseline: SARSA Q evaluation of the behavior policy (value head
/// fit at tau = 0.5 purely for extraction advantages), then the identical
/// policy extraction step.
std::pair<LearnerState, Metrics> train_onestep_baseline(const IqlConfig& config,
                                                        const Dataset& ds,
                                                        const TabularMdp& eval_mdp);

/// Offline-to-online finetuning: replay buffer seeded with the offline
/// dataset; per environment step, acts eps-greedily, appends the transition,
/// and runs exactly one (value; Q; target; policy) update cycle. When
/// final_buffer is given, the grown replay buffer is copied out.
std::pair<LearnerState, Metrics> finetune_online(LearnerState learner, const IqlConfig& config,
                                                 const Dataset& replay_init,
                                                 const TabularMdp& mdp, long env_steps,
                                                 double exploration_eps, Rng& rng,
                                                 Dataset* final_buffer = nullptr);

struct TauSweepRow {
    double tau = 0.0;
    double mean_return = 0.0;
    double std_return = 0.0;
};

/// train_offline per (tau, seed) on a fixed dataset; exact returns
/// aggregated as mean and sample standard deviation.
std::vector<TauSweepRow> sweep_tau(const IqlConfig& config_template, std::span<const double> taus,
                                   const Dataset& ds, const TabularMdp& mdp,
                                   std::span<const std::uint64_t> seeds);

/// Checkpoint container: config, environment arities, counters, RNG states
/// and every model/optimizer. save(load(x)) is byte-exact.
void save_checkpoint(const LearnerState& learner, const IqlConfig& config,
                     const std::filesystem::path& path);
std::pair<LearnerState, IqlConfig> load_checkpoint(const std::filesystem::path& path);

}  // namespace iql
