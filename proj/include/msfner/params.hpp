#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "msfner/autodiff.hpp"
#include "msfner/tensor.hpp"

namespace msfner {

/// Named model parameters. std::map keeps iteration order (and therefore
/// every reduction over parameters) deterministic.
using ParamSet = std::map<std::string, Tensor>;

/// Parameters bound into one Graph as differentiable leaves.
using VarMap = std::map<std::string, Var>;

/// Builds a scalar loss inside `g` from bound parameters.
using LossFn = std::function<Var(Graph& g, const VarMap& vars)>;

VarMap bind_params(Graph& g, const ParamSet& params);

/// Fetches a bound parameter, throwing with the missing name.
const Var& param(const VarMap& vars, const std::string& name);

struct ValueAndGrad {
    double value = 0.0;
    ParamSet grads;
};

/// Evaluates `loss` at `params` on a fresh graph and differentiates it.
/// Throws NumericError when the loss or any gradient is non-finite.
ValueAndGrad value_and_grad(const LossFn& loss, const ParamSet& params);

/// Loss value only; no backward pass.
double evaluate(const LossFn& loss, const ParamSet& params);

/// p - lr * g for every tensor. `params` is left untouched.
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr);

/// Elementwise a + c * b over matching sets.
ParamSet axpy(const ParamSet& a, const ParamSet& b, double c);

/// Zero tensors shaped like `like`.
ParamSet zeros_like(const ParamSet& like);

void require_same_layout(const ParamSet& a, const ParamSet& b, const char* what);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Moment state for the decoupled-weight-decay Adam update. An empty state
/// (step == 0) is initialised on first use.
struct AdamState {
    std::uint64_t step = 0;
    ParamSet first_moment;
    ParamSet second_moment;
};

struct AdaptiveResult {
    AdamState state;
    ParamSet params;
};

AdaptiveResult adaptive_step(const AdamState& state, const ParamSet& params,
                             const ParamSet& grads, double lr, const AdamConfig& config = {});

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool pass = false;
};

/// Compares the autodiff gradient of `loss` with central differences on every
/// coordinate. Relative error is |a - n| / max(|a|, |n|, 1e-3); the floor
/// keeps near-zero gradients from amplifying rounding noise.
GradCheckReport grad_check(const LossFn& loss, const ParamSet& params, double step = 1e-5,
                           double tol = 1e-4);

/// Rounds every value through float. Emulates 32-bit parameter storage.
void round_to_float(ParamSet& params);

bool all_finite(const ParamSet& params);

}  // namespace msfner
