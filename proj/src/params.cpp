#include "msfner/params.hpp"

#include <algorithm>
#include <cmath>

#include "msfner/error.hpp"

namespace msfner {

VarMap bind_params(Graph& g, const ParamSet& params) {
    VarMap vars;
    for (const auto& [name, t] : params) vars.emplace(name, g.parameter(t));
    return vars;
}

const Var& param(const VarMap& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
}

ValueAndGrad value_and_grad(const LossFn& loss, const ParamSet& params) {
    Graph g;
    VarMap vars = bind_params(g, params);
    Var out = loss(g, vars);
    const double v = out.value().item();
    if (!std::isfinite(v)) throw NumericError("non-finite loss");
    g.backward(out);
    ValueAndGrad r;
    r.value = v;
    for (const auto& [name, var] : vars) {
        const Tensor& gr = g.grad(var);
        if (!gr.all_finite()) throw NumericError("non-finite gradient for '" + name + "'");
        r.grads.emplace(name, gr);
    }
    return r;
}

double evaluate(const LossFn& loss, const ParamSet& params) {
    Graph g;
    VarMap vars;
    for (const auto& [name, t] : params) vars.emplace(name, g.constant(t));
    return loss(g, vars).value().item();
}

void require_same_layout(const ParamSet& a, const ParamSet& b, const char* what) {
    if (a.size() != b.size()) {
        throw Error(std::string(what) + ": parameter sets differ in size");
    }
    auto ib = b.begin();
    for (const auto& [name, t] : a) {
        if (ib->first != name || !ib->second.same_shape(t)) {
            throw Error(std::string(what) + ": layout mismatch at '" + name + "'");
        }
        ++ib;
    }
}

ParamSet axpy(const ParamSet& a, const ParamSet& b, double c) {
    require_same_layout(a, b, "axpy");
    ParamSet out = a;
    for (auto& [name, t] : out) {
        const Tensor& bt = b.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += c * bt[i];
    }
    return out;
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
    require_same_layout(params, grads, "sgd_step");
    return axpy(params, grads, -lr);
}

ParamSet zeros_like(const ParamSet& like) {
    ParamSet out;
    for (const auto& [name, t] : like) out.emplace(name, Tensor(t.shape(), 0.0));
    return out;
}

AdaptiveResult adaptive_step(const AdamState& state, const ParamSet& params,
                             const ParamSet& grads, double lr, const AdamConfig& config) {
    require_same_layout(params, grads, "adaptive_step");
    AdaptiveResult r{state, params};
    if (r.state.step == 0) {
        r.state.first_moment = zeros_like(params);
        r.state.second_moment = zeros_like(params);
    }
    require_same_layout(params, r.state.first_moment, "adaptive_step state");
    r.state.step += 1;
    const double t = static_cast<double>(r.state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (auto& [name, p] : r.params) {
        const Tensor& g = grads.at(name);
        Tensor& m = r.state.first_moment.at(name);
        Tensor& v = r.state.second_moment.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] *= 1.0 - lr * config.weight_decay;
            p[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
    return r;
}

GradCheckReport grad_check(const LossFn& loss, const ParamSet& params, double step, double tol) {
    const ValueAndGrad analytic = value_and_grad(loss, params);
    GradCheckReport report;
    ParamSet probe = params;
    for (auto& [name, t] : probe) {
        const Tensor& ga = analytic.grads.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + step;
            const double fp = evaluate(loss, probe);
            t[i] = orig - step;
            const double fm = evaluate(loss, probe);
            t[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: non-finite loss while perturbing '" + name + "'");
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double denom = std::max({std::abs(ga[i]), std::abs(numeric), 1e-3});
            const double rel = std::abs(ga[i] - numeric) / denom;
            if (rel > report.max_rel_error || report.worst_param.empty()) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.analytic = ga[i];
                report.numeric = numeric;
            }
        }
    }
    report.pass = report.max_rel_error <= tol;
    return report;
}

void round_to_float(ParamSet& params) {
    for (auto& [name, t] : params) {
        for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    }
}

bool all_finite(const ParamSet& params) {
    return std::all_of(params.begin(), params.end(),
                       [](const auto& kv) { return kv.second.all_finite(); });
}

}  // namespace msfner
