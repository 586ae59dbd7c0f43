#pragma once

// Bias-corrected Adam over flat parameter buffers. Components that train
// several tensors pack them into one flat vector and keep one state per
// logical parameter group (per-prompt, head, adapter).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace puma {

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    AdamState() = default;
    explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: params/grads size mismatch (" +
                                    std::to_string(params.size()) + " vs " +
                                    std::to_string(grads.size()) + ")");
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    } else if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: state sized for " +
                                    std::to_string(state.m.size()) + " params, got " +
                                    std::to_string(params.size()));
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

}  // namespace puma
