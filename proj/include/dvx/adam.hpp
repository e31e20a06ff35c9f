#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dvx/common.hpp"

namespace dvx {

// One named parameter tensor and its gradient, both owned elsewhere.
template <typename T>
struct ParamRef {
    std::string name;
    std::vector<T>* value = nullptr;
    const std::vector<T>* grad = nullptr;
};

template <typename T>
struct AdamState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<T>> m;  // first moments, one entry per parameter
    std::vector<std::vector<T>> v;  // second moments
};

// Bias-corrected Adam update applied in the order the refs are listed.
// Rejects non-finite gradients, naming the offending parameter.
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& refs, AdamState<T>& state) {
    if (state.m.empty()) {
        state.m.resize(refs.size());
        state.v.resize(refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i) {
            state.m[i].assign(refs[i].value->size(), T(0));
            state.v[i].assign(refs[i].value->size(), T(0));
        }
    }
    require(state.m.size() == refs.size(), "adam state does not match parameter list");

    for (std::size_t i = 0; i < refs.size(); ++i) {
        require(refs[i].grad->size() == refs[i].value->size(),
                "adam: gradient shape mismatch for " + refs[i].name);
        for (T g : *refs[i].grad)
            if (!std::isfinite(static_cast<double>(g)))
                fail("adam: non-finite gradient in " + refs[i].name);
    }

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        auto& p = *refs[i].value;
        const auto& g = *refs[i].grad;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = static_cast<double>(g[k]);
            const double mk = state.beta1 * static_cast<double>(m[k]) + (1.0 - state.beta1) * gk;
            const double vk =
                state.beta2 * static_cast<double>(v[k]) + (1.0 - state.beta2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            p[k] = static_cast<T>(static_cast<double>(p[k]) -
                                  state.lr * (mk / bc1) / (std::sqrt(vk / bc2) + state.eps));
        }
    }
}

}  // namespace dvx
