#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "json.hpp"

namespace iql {

enum class ApproxKind { Table, Linear, Mlp };

/// Inputs are either a cell index (tabular setting; one-hot encoded for the
/// parametric kinds) or an explicit feature vector.
using Features = std::vector<double>;
using ApproxInput = std::variant<int, Features>;

struct ApproxShape {
    ApproxKind kind = ApproxKind::Table;
    int n_inputs = 0;   // table: cell count; linear/mlp: feature dimension
    int n_outputs = 0;  // outputs per input
    std::vector<int> hidden;  // mlp hidden layer widths

    std::size_t param_count() const;
    bool operator==(const ApproxShape&) const = default;
};

/// Differentiable parametric function with a flat parameter vector.
/// Table: direct per-cell rows. Linear: weight * features, no bias.
/// Mlp: rectifier hidden layers, linear head.
struct Approximator {
    ApproxShape shape;
    std::vector<double> params;
};

/// table/linear: zeros; mlp: symmetric uniform fan-in init for hidden
/// layers, zero final layer, so initial outputs are exactly 0.
Approximator init_approximator(const ApproxShape& shape, std::uint64_t seed);

std::vector<double> eval(const Approximator& model, const ApproxInput& input);
std::vector<double> eval(const Approximator& model, int index);
std::vector<double> eval(const Approximator& model, std::span<const double> features);

/// Adds scale * d(cotangent . output)/d(params) into `out` (length
/// param_count). Rectifier subgradient at the kink is 0.
void grad_accumulate(const Approximator& model, const ApproxInput& input,
                     std::span<const double> cotangent, double scale, std::span<double> out);

std::vector<double> grad(const Approximator& model, const ApproxInput& input,
                         std::span<const double> cotangent);

enum class LrSchedule { Constant, Cosine };

/// Adam accumulators plus the learning-rate schedule. Cosine multiplies the
/// base rate by 0.5*(1+cos(pi*step/horizon)), clamped past the horizon.
struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
    double base_lr = 3e-4;
    LrSchedule schedule = LrSchedule::Constant;
    long horizon = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

OptimizerState init_optimizer(const Approximator& model, double lr,
                              LrSchedule schedule = LrSchedule::Constant, long horizon = 0);

double scheduled_lr(const OptimizerState& opt);

/// One bias-corrected adaptive-moment step. Throws on non-finite gradients.
void apply_update(Approximator& model, OptimizerState& opt, std::span<const double> gradient);

/// target <- (1-rate)*target + rate*online, elementwise.
void polyak_update(Approximator& target, const Approximator& online, double rate);

nlohmann::ordered_json approximator_to_json(const Approximator& model);
Approximator approximator_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json optimizer_to_json(const OptimizerState& opt);
OptimizerState optimizer_from_json(const nlohmann::ordered_json& j);

/// Checkpoint file: JSON header with shape metadata plus the flat parameter
/// list. save(load(x)) is byte-exact.
void save_approximator(const Approximator& model, const std::filesystem::path& path);
Approximator load_approximator(const std::filesystem::path& path);

}  // namespace iql
