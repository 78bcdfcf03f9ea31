#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pconv/core/tensor.hpp"

namespace pconv {

/// Per-tensor Adam accumulators. Hyperparameters default to the values of
/// the original Adam publication.
template <std::floating_point T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-3;

    static AdamState fresh(std::size_t size, double learning_rate)
    {
        AdamState s;
        s.m.assign(size, T(0));
        s.v.assign(size, T(0));
        s.learning_rate = learning_rate;
        return s;
    }
};

/// One bias-corrected Adam update of `param` in place.
template <std::floating_point T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState<T>& state)
{
    if (param.size() != grad.size()) {
        throw DimensionError("adam_step: parameter has " + std::to_string(param.size()) + " elements, gradient " +
                             std::to_string(grad.size()));
    }
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(param.size(), T(0));
        state.v.assign(param.size(), T(0));
    }
    if (state.m.size() != param.size() || state.v.size() != param.size()) {
        throw DimensionError("adam_step: optimizer state does not match the parameter size");
    }
    for (T g : grad) {
        if (!std::isfinite(g)) {
            throw DivergenceError("adam_step: non-finite gradient");
        }
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const T b1 = static_cast<T>(state.beta1);
    const T b2 = static_cast<T>(state.beta2);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        const double m_hat = static_cast<double>(state.m[i]) / c1;
        const double v_hat = static_cast<double>(state.v[i]) / c2;
        const double update = state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
    }
}

template <std::floating_point T>
void adam_step(Tensor4<T>& param, const Tensor4<T>& grad, AdamState<T>& state)
{
    require_same_shape(param.shape(), grad.shape(), "adam_step");
    adam_step<T>(param.values(), grad.values(), state);
}

} // namespace pconv
