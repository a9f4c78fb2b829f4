#include "mmon/adam.hpp"

#include <cmath>
#include <string>

#include "mmon/error.hpp"

namespace mmon::ag {

AdamState::AdamState(std::span<const Tensor> params, AdamConfig cfg) : config(cfg) {
    for (const Tensor& p : params) {
        m.emplace_back(p.size(), 0.0);
        v.emplace_back(p.size(), 0.0);
        t.push_back(0);
    }
}

void adam_step(std::span<Tensor> params, AdamState& state, std::span<const bool> update) {
    if (params.size() != state.m.size()) throw ShapeMismatch("optimizer state does not match parameter list");
    if (!update.empty() && update.size() != params.size()) throw ShapeMismatch("update mask length");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if ((update.empty() || update[i]) && !params[i].has_grad()) {
            throw MissingGrad("parameter " + std::to_string(i) + " has no gradient");
        }
    }
    const AdamConfig& c = state.config;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!update.empty() && !update[i]) {
            if (p.has_grad()) p.zero_grad();
            continue;
        }
        if (state.m[i].size() != p.size()) throw ShapeMismatch("moment size for parameter " + std::to_string(i));
        const std::int64_t t = ++state.t[i];
        const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
        auto g = p.grad();
        auto x = p.values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < x.size(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            x[k] -= c.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps);
        }
        p.zero_grad();
    }
    ++state.step;
}

}  // namespace mmon::ag
