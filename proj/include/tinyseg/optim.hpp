#pragma once

#include <cmath>
#include <map>
#include <string>

#include "tinyseg/tensor.hpp"

namespace tinyseg {

// Adam with bias correction plus the stepped learning-rate schedule
// (base LR scaled by `factor` at the mid and three-quarter epochs,
// cumulatively). No weight decay.

template <typename T>
struct AdamStateT {
    std::map<std::string, TensorT<T>> m;  // first moments, keyed like the params
    std::map<std::string, TensorT<T>> v;  // second moments
    std::int64_t t = 0;                   // completed steps
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

using AdamState = AdamStateT<float>;

// One update over every (name, gradient) pair. Parameters without a
// gradient this step are left untouched. Iteration order is the map's
// name order, so updates are deterministic.
template <typename T>
void adam_step(std::map<std::string, TensorT<T>>& params,
               const std::map<std::string, TensorT<T>>& grads, AdamStateT<T>& state, T lr) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
    for (const auto& [name, grad] : grads) {
        auto it = params.find(name);
        if (it == params.end())
            throw ShapeMismatch("adam_step: gradient for unknown parameter '" + name + "'");
        TensorT<T>& p = it->second;
        if (grad.shape != p.shape)
            throw ShapeMismatch("adam_step: gradient shape " + shape_str(grad.shape) +
                                " vs parameter '" + name + "' " + shape_str(p.shape));
        if (!grad.all_finite())
            throw NonFiniteGradient("adam_step: non-finite gradient for '" + name + "'");
        auto mi = state.m.find(name);
        if (mi == state.m.end()) {
            mi = state.m.emplace(name, TensorT<T>::zeros(p.shape)).first;
            state.v.emplace(name, TensorT<T>::zeros(p.shape));
        }
        TensorT<T>& m = mi->second;
        TensorT<T>& v = state.v.at(name);
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const T g = grad.data[i];
            m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * g;
            v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * g * g;
            const T m_hat = m.data[i] / static_cast<T>(bc1);
            const T v_hat = v.data[i] / static_cast<T>(bc2);
            p.data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

struct LrSchedule {
    double base_lr = 0.001;
    double factor = 0.75;
    int total_epochs = 0;
};

// Piecewise-constant: base for the first half, base*factor from
// floor(total/2), base*factor^2 from floor(3*total/4). Epochs are 0-based.
inline double lr_at_epoch(const LrSchedule& sched, int epoch) {
    if (epoch < 0 || epoch >= sched.total_epochs)
        throw EpochOutOfRange("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " +
                              std::to_string(sched.total_epochs) + ")");
    const int mid = sched.total_epochs / 2;
    const int three_quarter = (3 * sched.total_epochs) / 4;
    double lr = sched.base_lr;
    if (epoch >= mid) lr *= sched.factor;
    if (epoch >= three_quarter) lr *= sched.factor;
    return lr;
}

}  // namespace tinyseg
