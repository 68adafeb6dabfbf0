#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "hds/autodiff.hpp"

namespace hds {

// Adam with bias correction. Moment tensors mirror the parameter shapes.
template <class T>
struct AdamStateT {
    std::vector<TensorT<T>> m;
    std::vector<TensorT<T>> v;
    int64_t step = 0;
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

using AdamState = AdamStateT<float>;

template <class T>
void adam_init(AdamStateT<T>& state, const std::vector<ad::Var<T>>& params, T lr) {
    state.m.clear();
    state.v.clear();
    for (auto& p : params) {
        state.m.emplace_back(p->value.shape, T(0));
        state.v.emplace_back(p->value.shape, T(0));
    }
    state.step = 0;
    state.lr = lr;
}

// One update from the gradients currently held by the parameter nodes.
// A non-finite gradient rejects the whole step.
template <class T>
void adam_step(std::vector<ad::Var<T>>& params, AdamStateT<T>& state) {
    check_shape(state.m.size() == params.size(), "adam_step: state/parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        params[i]->ensure_grad();
        for (T g : params[i]->grad.data)
            if (!std::isfinite(g))
                throw std::runtime_error("adam_step: non-finite gradient at step " +
                                         std::to_string(state.step + 1) +
                                         " (training diverged)");
    }
    state.step += 1;
    const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
    const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->value;
        auto& g = params[i]->grad;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (int64_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

template <class T>
void zero_grads(std::vector<ad::Var<T>>& params) {
    for (auto& p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
}

// Central finite-difference check of a scalar function. Returns the max over
// elements of |analytic - numeric| / max(1, |numeric|). Double precision is
// the intended mode; single-precision differences are too noisy to trust.
template <class T>
T grad_check(const std::function<ad::Var<T>(const ad::Var<T>&)>& scalar_fn,
             const TensorT<T>& input, T eps = T(1e-5)) {
    auto x = ad::leaf(input, true);
    auto out = scalar_fn(x);
    check_shape(out->value.size() == 1,
                "grad_check: function output must be scalar, got " +
                    shape_str(out->value.shape));
    ad::backward(out);
    TensorT<T> analytic = x->grad;

    T max_rel = T(0);
    TensorT<T> probe = input;
    for (int64_t i = 0; i < probe.size(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + eps;
        const T fp = scalar_fn(ad::constant(probe))->value[0];
        probe[i] = orig - eps;
        const T fm = scalar_fn(ad::constant(probe))->value[0];
        probe[i] = orig;
        const T numeric = (fp - fm) / (T(2) * eps);
        const T rel = std::abs(analytic[i] - numeric) / std::max(T(1), std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace hds
