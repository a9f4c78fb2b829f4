#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mmon/tensor.hpp"

namespace mmon::ag {

struct GradCheckOptions {
    double h = 1e-5;
    /// Elements probed per input; 0 probes every element.
    std::size_t max_probes = 0;
    std::uint64_t seed = 0;
    /// Skip probes whose central differences at h and h/2 disagree by more
    /// than this relative amount (the step straddles a relu kink); 0 keeps all.
    double kink_tolerance = 0.0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    std::size_t skipped = 0;
    // The probe with the largest error.
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares tape gradients of scalar f with central differences over the
/// given inputs. Relative error uses max(|g|, |g_fd|, 1e-8) as denominator.
/// f is re-evaluated on a non-recording tape for each probe.
GradCheckResult gradient_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> inputs,
                               GradCheckOptions options = {});

}  // namespace mmon::ag
