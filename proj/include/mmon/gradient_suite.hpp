#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmon::harness {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t probes = 0;
    std::size_t skipped = 0;  // probes straddling a relu kink
    bool passed() const { return max_rel_error < tolerance; }
};

/// Finite-difference checks of every differentiable op (tolerance 1e-4) and
/// of the full loss of a miniature model on 16x16 panels (tolerance 1e-3),
/// each over `trials` random draws.
std::vector<GradCheckEntry> gradient_suite(int trials, std::uint64_t seed);

}  // namespace mmon::harness
