#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mmon/puzzle.hpp"
#include "mmon/rng.hpp"

namespace mmon {

/// Rule set for one puzzle. Per component: one non-Constant rule on Number or
/// Position when the component has several slots (the other attribute is
/// derived from it), then one rule each for Type, Size and Color.
RuleAnnotation sample_rule_annotation(ConfigKind config, Rng& rng);

/// Whether completing row 3 with `candidate` breaks at least one annotated rule.
bool violates_annotation(const RuleAnnotation& annotation, std::span<const PanelSymbolic, 8> context,
                         const PanelSymbolic& candidate, ConfigKind config);

struct CandidateSet {
    std::array<PanelSymbolic, 8> candidates;
    int label = 0;
};

/// Seven distractors mutated from the answer on 1-3 attributes, plus the
/// answer at a random index. Each distractor is distinct, breaks an annotated
/// rule and scores strictly below the answer under the oracle.
CandidateSet generate_candidates(const PanelSymbolic& answer, const RuleAnnotation& annotation,
                                 std::span<const PanelSymbolic, 8> context, ConfigKind config, Rng& rng);

/// Deterministic in (config, seed).
PuzzleInstance generate_puzzle(ConfigKind config, std::uint64_t seed);

/// n instances with seeds derive_seed(master_seed, i).
std::vector<PuzzleInstance> generate_corpus(ConfigKind config, std::size_t n, std::uint64_t master_seed);

}  // namespace mmon
