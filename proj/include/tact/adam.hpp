#ifndef TACT_ADAM_HPP
#define TACT_ADAM_HPP

#include <cmath>
#include <string>
#include <vector>

#include "tact/layers.hpp"
#include "tact/tensor.hpp"

namespace tact::nn {

// Adam with bias correction. Moment tensors are parallel to the trainable
// entries of the registry the state was initialized from.
template <Real T>
struct AdamState {
    std::size_t step_count = 0;
    T lr = static_cast<T>(5e-5);
    T beta1 = static_cast<T>(0.9);
    T beta2 = static_cast<T>(0.999);
    T eps = static_cast<T>(1e-8);
    std::vector<Tensor<T>> first_moment, second_moment;

    template <Real U>
    void init(const ParamRegistry<U>& reg) {
        first_moment.clear();
        second_moment.clear();
        step_count = 0;
        for (const auto& e : reg.entries) {
            if (!e.grad) continue;
            first_moment.emplace_back(e.value->shape);
            second_moment.emplace_back(e.value->shape);
        }
    }
};

// Zeroes both moments and the step count; hyperparameters are retained.
template <Real T>
void adam_reset(AdamState<T>& state) {
    state.step_count = 0;
    for (auto& m : state.first_moment) m.zero();
    for (auto& v : state.second_moment) v.zero();
}

template <Real T>
void adam_step(ParamRegistry<T>& reg, AdamState<T>& state) {
    state.step_count += 1;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1),
                                                 static_cast<double>(state.step_count)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2),
                                                 static_cast<double>(state.step_count)));
    std::size_t slot = 0;
    for (auto& e : reg.entries) {
        if (!e.grad) continue;
        Tensor<T>& m = state.first_moment[slot];
        Tensor<T>& v = state.second_moment[slot];
        ++slot;
        if (!m.same_shape(*e.value))
            throw shape_error("adam_step: moment shape mismatch for " + e.name);
        const std::size_t n = e.value->numel();
        T* __restrict__ p = e.value->ptr();
        const T* __restrict__ g = e.grad->ptr();
        T* __restrict__ pm = m.ptr();
        T* __restrict__ pv = v.ptr();
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(g[i]))
                throw numeric_error("adam_step: non-finite gradient in " + e.name +
                                    " at flat index " + std::to_string(i));
        for (std::size_t i = 0; i < n; ++i) {
            pm[i] = state.beta1 * pm[i] + (T(1) - state.beta1) * g[i];
            pv[i] = state.beta2 * pv[i] + (T(1) - state.beta2) * g[i] * g[i];
            const T m_hat = pm[i] / bc1;
            const T v_hat = pv[i] / bc2;
            p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

}  // namespace tact::nn

#endif
