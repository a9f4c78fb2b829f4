#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmon/tensor.hpp"

namespace mmon::ag {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments for a fixed, ordered parameter list.
struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    /// Per-parameter update counts; differ from `step` only for parameters
    /// that were frozen during some steps.
    std::vector<std::int64_t> t;
    std::int64_t step = 0;

    AdamState() = default;
    AdamState(std::span<const Tensor> params, AdamConfig cfg);
};

/// One Adam update. Parameters with `update[i] == false` are left untouched
/// (their moments too); an empty `update` updates everything. Every updated
/// parameter must hold a gradient (MissingGrad). All gradients are zeroed
/// afterwards.
void adam_step(std::span<Tensor> params, AdamState& state, std::span<const bool> update = {});

}  // namespace mmon::ag
