#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cth/tensor.hpp"

namespace cth {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // strict: a non-finite gradient throws, naming the parameter.
    // lenient: the offending tensor's update is skipped for this step.
    bool strict_nan = true;
};

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    int64_t step = 0;

    static AdamState like(const std::vector<Tensor<T>>& params) {
        AdamState s;
        for (const auto& p : params) {
            s.m.push_back(Tensor<T>::zeros(p.shape));
            s.v.push_back(Tensor<T>::zeros(p.shape));
        }
        return s;
    }
};

// Standard bias-corrected Adam (Kingma & Ba). Updates params in place.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
               const std::vector<std::string>& names, AdamState<T>& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        const Tensor<T>& g = grads[p];
        if (!g.all_finite()) {
            if (cfg.strict_nan)
                throw std::runtime_error("adam_step: non-finite gradient for parameter '" +
                                         (p < names.size() ? names[p] : std::to_string(p)) + "'");
            continue;
        }
        Tensor<T>& w = params[p];
        Tensor<T>& m = state.m[p];
        Tensor<T>& v = state.v[p];
        for (int64_t i = 0; i < w.numel(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<T>(static_cast<double>(w[i]) -
                                  cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

}  // namespace cth
