// AdamW with decoupled weight decay.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "iajepa/tensor.hpp"

namespace iajepa {

struct OptimError : std::runtime_error {
    explicit OptimError(const std::string& m) : std::runtime_error(m) {}
};

struct AdamwHyper {
    double lr = 1.5e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct OptState {
    Tensor<T> m;
    Tensor<T> v;
    int64_t t = 0;

    OptState() = default;
    explicit OptState(const std::vector<int>& shape) : m(Tensor<T>::zeros(shape)), v(Tensor<T>::zeros(shape)) {}
};

// t' = t+1; m' = b1 m + (1-b1) g; v' = b2 v + (1-b2) g^2;
// param -= lr * ( (m'/(1-b1^t')) / (sqrt(v'/(1-b2^t')) + eps) + wd * param ).
// A non-finite gradient rejects the step: param and state stay untouched.
template <typename T>
void adamw_step(Tensor<T>& param, const Tensor<T>& grad, OptState<T>& st, const AdamwHyper& h) {
    if (!param.same_shape(grad) || !param.same_shape(st.m) || !param.same_shape(st.v))
        throw OptimError("adamw_step: shape mismatch, param " + shape_str(param.shape) + " grad " + shape_str(grad.shape));
    for (int64_t i = 0; i < grad.numel(); ++i)
        if (!std::isfinite(double(grad.data[i])))
            throw OptimError("adamw_step: non-finite gradient at coordinate " + std::to_string(i));
    st.t += 1;
    const double c1 = 1.0 - std::pow(h.beta1, double(st.t));
    const double c2 = 1.0 - std::pow(h.beta2, double(st.t));
    for (int64_t i = 0; i < param.numel(); ++i) {
        const T g = grad.data[i];
        st.m.data[i] = T(h.beta1) * st.m.data[i] + T(1.0 - h.beta1) * g;
        st.v.data[i] = T(h.beta2) * st.v.data[i] + T(1.0 - h.beta2) * g * g;
        const T mhat = st.m.data[i] / T(c1);
        const T vhat = st.v.data[i] / T(c2);
        param.data[i] -= T(h.lr) * (mhat / (std::sqrt(vhat) + T(h.eps)) + T(h.weight_decay) * param.data[i]);
    }
}

}  // namespace iajepa
