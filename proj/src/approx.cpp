#include "iql/approx.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "iql/rng.hpp"

namespace iql {

namespace {

void check_features(const ApproxShape& shape, std::span<const double> x) {
    if (shape.kind == ApproxKind::Table)
        throw std::invalid_argument("approx: table kind takes an index, not features");
    if (static_cast<int>(x.size()) != shape.n_inputs)
        throw std::invalid_argument("approx: feature vector length mismatch");
}

void check_index(const ApproxShape& shape, int index) {
    if (index < 0 || index >= shape.n_inputs)
        throw std::invalid_argument("approx: input index out of range");
}

Features one_hot(int index, int n) {
    Features x(static_cast<std::size_t>(n), 0.0);
    x[static_cast<std::size_t>(index)] = 1.0;
    return x;
}

// Layer sizes of the mlp, input first, head last.
std::vector<int> mlp_widths(const ApproxShape& shape) {
    std::vector<int> w;
    w.push_back(shape.n_inputs);
    for (int h : shape.hidden) w.push_back(h);
    w.push_back(shape.n_outputs);
    return w;
}

std::vector<double> mlp_forward(const Approximator& model, std::span<const double> x,
                                std::vector<std::vector<double>>* activations) {
    const std::vector<int> widths = mlp_widths(model.shape);
    std::vector<double> cur(x.begin(), x.end());
    if (activations) activations->push_back(cur);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l];
        const int out = widths[l + 1];
        const bool is_head = (l + 2 == widths.size());
        std::vector<double> next(static_cast<std::size_t>(out), 0.0);
        for (int j = 0; j < out; ++j) {
            double z = model.params[off + static_cast<std::size_t>(out) * in + j];  // bias
            const double* w = model.params.data() + off + static_cast<std::size_t>(j) * in;
            for (int i = 0; i < in; ++i) z += w[i] * cur[static_cast<std::size_t>(i)];
            next[static_cast<std::size_t>(j)] = is_head ? z : (z > 0.0 ? z : 0.0);
        }
        off += static_cast<std::size_t>(out) * in + out;
        cur = std::move(next);
        if (activations && !is_head) activations->push_back(cur);
    }
    return cur;
}

}  // namespace

std::size_t ApproxShape::param_count() const {
    if (n_inputs <= 0 || n_outputs <= 0)
        throw std::invalid_argument("approx: shape arities must be positive");
    switch (kind) {
        case ApproxKind::Table:
        case ApproxKind::Linear:
            return static_cast<std::size_t>(n_inputs) * n_outputs;
        case ApproxKind::Mlp: {
            if (hidden.empty())
                throw std::invalid_argument("approx: mlp needs at least one hidden layer");
            for (int h : hidden)
                if (h <= 0) throw std::invalid_argument("approx: mlp widths must be positive");
            std::size_t count = 0;
            int prev = n_inputs;
            for (int h : hidden) {
                count += static_cast<std::size_t>(prev) * h + h;
                prev = h;
            }
            count += static_cast<std::size_t>(prev) * n_outputs + n_outputs;
            return count;
        }
    }
    throw std::invalid_argument("approx: unknown kind");
}

Approximator init_approximator(const ApproxShape& shape, std::uint64_t seed) {
    Approximator model;
    model.shape = shape;
    model.params.assign(shape.param_count(), 0.0);
    if (shape.kind == ApproxKind::Mlp) {
        Rng rng = make_rng(seed, 0x696e6974ULL);  // "init"
        const std::vector<int> widths = mlp_widths(shape);
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const int in = widths[l];
            const int out = widths[l + 1];
            const bool is_head = (l + 2 == widths.size());
            const std::size_t n = static_cast<std::size_t>(out) * in + out;
            if (!is_head) {
                const double bound = 1.0 / std::sqrt(static_cast<double>(in));
                for (std::size_t k = 0; k < n; ++k)
                    model.params[off + k] = bound * (2.0 * uniform01(rng) - 1.0);
            }
            off += n;  // head stays zero, so a fresh model evaluates to 0
        }
    }
    return model;
}

std::vector<double> eval(const Approximator& model, int index) {
    check_index(model.shape, index);
    switch (model.shape.kind) {
        case ApproxKind::Table: {
            const std::size_t off =
                static_cast<std::size_t>(index) * model.shape.n_outputs;
            return {model.params.begin() + off,
                    model.params.begin() + off + model.shape.n_outputs};
        }
        case ApproxKind::Linear: {
            std::vector<double> y(static_cast<std::size_t>(model.shape.n_outputs), 0.0);
            for (int j = 0; j < model.shape.n_outputs; ++j)
                y[static_cast<std::size_t>(j)] =
                    model.params[static_cast<std::size_t>(j) * model.shape.n_inputs + index];
            return y;
        }
        case ApproxKind::Mlp: {
            const Features x = one_hot(index, model.shape.n_inputs);
            return mlp_forward(model, x, nullptr);
        }
    }
    throw std::invalid_argument("approx: unknown kind");
}

std::vector<double> eval(const Approximator& model, std::span<const double> features) {
    check_features(model.shape, features);
    if (model.shape.kind == ApproxKind::Linear) {
        std::vector<double> y(static_cast<std::size_t>(model.shape.n_outputs), 0.0);
        for (int j = 0; j < model.shape.n_outputs; ++j) {
            const double* w =
                model.params.data() + static_cast<std::size_t>(j) * model.shape.n_inputs;
            double acc = 0.0;
            for (int i = 0; i < model.shape.n_inputs; ++i)
                acc += w[i] * features[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(j)] = acc;
        }
        return y;
    }
    return mlp_forward(model, features, nullptr);
}

std::vector<double> eval(const Approximator& model, const ApproxInput& input) {
    if (std::holds_alternative<int>(input)) return eval(model, std::get<int>(input));
    return eval(model, std::span<const double>(std::get<Features>(input)));
}

namespace {

void grad_features(const Approximator& model, std::span<const double> x,
                   std::span<const double> cot, double scale, std::span<double> out) {
    const ApproxShape& shape = model.shape;
    if (shape.kind == ApproxKind::Linear) {
        for (int j = 0; j < shape.n_outputs; ++j) {
            const double c = scale * cot[static_cast<std::size_t>(j)];
            if (c == 0.0) continue;
            double* g = out.data() + static_cast<std::size_t>(j) * shape.n_inputs;
            for (int i = 0; i < shape.n_inputs; ++i) g[i] += c * x[static_cast<std::size_t>(i)];
        }
        return;
    }
    // mlp reverse accumulation
    std::vector<std::vector<double>> acts;
    mlp_forward(model, x, &acts);
    const std::vector<int> widths = mlp_widths(shape);
    const std::size_t n_layers = widths.size() - 1;

    std::vector<std::size_t> offsets(n_layers);
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        offsets[l] = off;
        off += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
    }

    std::vector<double> delta(cot.begin(), cot.end());
    for (double& d : delta) d *= scale;
    for (std::size_t l = n_layers; l-- > 0;) {
        const int in = widths[l];
        const int outw = widths[l + 1];
        const std::vector<double>& a = acts[l];
        double* gw = out.data() + offsets[l];
        double* gb = gw + static_cast<std::size_t>(outw) * in;
        const double* w = model.params.data() + offsets[l];
        std::vector<double> prev_delta(static_cast<std::size_t>(in), 0.0);
        for (int j = 0; j < outw; ++j) {
            const double d = delta[static_cast<std::size_t>(j)];
            gb[j] += d;
            double* gwj = gw + static_cast<std::size_t>(j) * in;
            const double* wj = w + static_cast<std::size_t>(j) * in;
            if (d != 0.0) {
                for (int i = 0; i < in; ++i) {
                    gwj[i] += d * a[static_cast<std::size_t>(i)];
                    prev_delta[static_cast<std::size_t>(i)] += d * wj[i];
                }
            }
        }
        if (l > 0) {
            // gate through the rectifier; subgradient 0 at the kink
            for (int i = 0; i < in; ++i)
                if (a[static_cast<std::size_t>(i)] <= 0.0)
                    prev_delta[static_cast<std::size_t>(i)] = 0.0;
            delta = std::move(prev_delta);
        }
    }
}

}  // namespace

void grad_accumulate(const Approximator& model, const ApproxInput& input,
                     std::span<const double> cotangent, double scale, std::span<double> out) {
    if (static_cast<int>(cotangent.size()) != model.shape.n_outputs)
        throw std::invalid_argument("approx: cotangent length mismatch");
    if (out.size() != model.params.size())
        throw std::invalid_argument("approx: gradient buffer length mismatch");

    if (std::holds_alternative<int>(input)) {
        const int index = std::get<int>(input);
        check_index(model.shape, index);
        switch (model.shape.kind) {
            case ApproxKind::Table:
                for (int j = 0; j < model.shape.n_outputs; ++j)
                    out[static_cast<std::size_t>(index) * model.shape.n_outputs + j] +=
                        scale * cotangent[static_cast<std::size_t>(j)];
                return;
            case ApproxKind::Linear:
                for (int j = 0; j < model.shape.n_outputs; ++j)
                    out[static_cast<std::size_t>(j) * model.shape.n_inputs + index] +=
                        scale * cotangent[static_cast<std::size_t>(j)];
                return;
            case ApproxKind::Mlp: {
                const Features x = one_hot(index, model.shape.n_inputs);
                grad_features(model, x, cotangent, scale, out);
                return;
            }
        }
        throw std::invalid_argument("approx: unknown kind");
    }
    const Features& x = std::get<Features>(input);
    check_features(model.shape, x);
    grad_features(model, x, cotangent, scale, out);
}

std::vector<double> grad(const Approximator& model, const ApproxInput& input,
                         std::span<const double> cotangent) {
    std::vector<double> g(model.params.size(), 0.0);
    grad_accumulate(model, input, cotangent, 1.0, g);
    return g;
}

OptimizerState init_optimizer(const Approximator& model, double lr, LrSchedule schedule,
                              long horizon) {
    if (!(lr > 0.0)) throw std::invalid_argument("optimizer: learning rate must be positive");
    if (schedule == LrSchedule::Cosine && horizon <= 0)
        throw std::invalid_argument("optimizer: cosine schedule needs a positive horizon");
    OptimizerState opt;
    opt.m.assign(model.params.size(), 0.0);
    opt.v.assign(model.params.size(), 0.0);
    opt.base_lr = lr;
    opt.schedule = schedule;
    opt.horizon = horizon;
    return opt;
}

double scheduled_lr(const OptimizerState& opt) {
    if (opt.schedule == LrSchedule::Constant) return opt.base_lr;
    const long s = opt.step < opt.horizon ? opt.step : opt.horizon;
    const double frac = static_cast<double>(s) / static_cast<double>(opt.horizon);
    return opt.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void apply_update(Approximator& model, OptimizerState& opt, std::span<const double> gradient) {
    if (gradient.size() != model.params.size())
        throw std::invalid_argument("optimizer: gradient length mismatch");
    if (opt.m.size() != model.params.size())
        throw std::invalid_argument("optimizer: state length mismatch");
    for (double g : gradient)
        if (!std::isfinite(g))
            throw std::invalid_argument("optimizer: non-finite gradient entry");

    const double lr = scheduled_lr(opt);
    const long t = opt.step + 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const double g = gradient[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        const double mhat = opt.m[i] / bc1;
        const double vhat = opt.v[i] / bc2;
        model.params[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    opt.step = t;
}

void polyak_update(Approximator& target, const Approximator& online, double rate) {
    if (!(target.shape == online.shape))
        throw std::invalid_argument("polyak_update: shape mismatch");
    if (!(rate > 0.0 && rate <= 1.0))
        throw std::invalid_argument("polyak_update: rate must be in (0,1]");
    for (std::size_t i = 0; i < target.params.size(); ++i)
        target.params[i] = (1.0 - rate) * target.params[i] + rate * online.params[i];
}

namespace {

const char* kind_name(ApproxKind kind) {
    switch (kind) {
        case ApproxKind::Table: return "table";
        case ApproxKind::Linear: return "linear";
        case ApproxKind::Mlp: return "mlp";
    }
    throw std::invalid_argument("approx: unknown kind");
}

ApproxKind kind_from_name(const std::string& name) {
    if (name == "table") return ApproxKind::Table;
    if (name == "linear") return ApproxKind::Linear;
    if (name == "mlp") return ApproxKind::Mlp;
    throw std::invalid_argument("approx: unknown kind '" + name + "'");
}

}  // namespace

nlohmann::ordered_json approximator_to_json(const Approximator& model) {
    nlohmann::ordered_json j;
    j["kind"] = kind_name(model.shape.kind);
    j["n_inputs"] = model.shape.n_inputs;
    j["n_outputs"] = model.shape.n_outputs;
    j["hidden"] = model.shape.hidden;
    j["params"] = model.params;
    return j;
}

Approximator approximator_from_json(const nlohmann::ordered_json& j) {
    Approximator model;
    model.shape.kind = kind_from_name(j.at("kind").get<std::string>());
    model.shape.n_inputs = j.at("n_inputs").get<int>();
    model.shape.n_outputs = j.at("n_outputs").get<int>();
    model.shape.hidden = j.at("hidden").get<std::vector<int>>();
    model.params = j.at("params").get<std::vector<double>>();
    if (model.params.size() != model.shape.param_count())
        throw std::runtime_error("approx: checkpoint parameter count mismatch");
    for (double p : model.params)
        if (!std::isfinite(p)) throw std::runtime_error("approx: non-finite checkpoint parameter");
    return model;
}

nlohmann::ordered_json optimizer_to_json(const OptimizerState& opt) {
    nlohmann::ordered_json j;
    j["m"] = opt.m;
    j["v"] = opt.v;
    j["step"] = opt.step;
    j["base_lr"] = opt.base_lr;
    j["schedule"] = opt.schedule == LrSchedule::Cosine ? "cosine" : "constant";
    j["horizon"] = opt.horizon;
    return j;
}

OptimizerState optimizer_from_json(const nlohmann::ordered_json& j) {
    OptimizerState opt;
    opt.m = j.at("m").get<std::vector<double>>();
    opt.v = j.at("v").get<std::vector<double>>();
    opt.step = j.at("step").get<long>();
    opt.base_lr = j.at("base_lr").get<double>();
    opt.schedule = j.at("schedule").get<std::string>() == "cosine" ? LrSchedule::Cosine
                                                                   : LrSchedule::Constant;
    opt.horizon = j.at("horizon").get<long>();
    return opt;
}

void save_approximator(const Approximator& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_approximator: cannot open " + path.string());
    out << approximator_to_json(model).dump(2) << "\n";
}

Approximator load_approximator(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_approximator: cannot open " + path.string());
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("load_approximator: parse error in " + path.string() + ": " +
                                 e.what());
    }
    return approximator_from_json(j);
}

}  // namespace iql
