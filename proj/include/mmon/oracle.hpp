#pragma once

// Exhaustive symbolic solver. Rules are inferred from the observed rows by
// enumerating every rule instantiation; candidates are scored by how many
// attribute groups they complete consistently.
//
// Attribute groups: Type, Size and Color of every component, plus one layout
// group per multi-slot component that merges Number and Position (Position
// determines Number, so the two are judged together). Single-slot components
// have no layout group since their layout cannot change.

#include <array>
#include <span>
#include <vector>

#include "mmon/puzzle.hpp"

namespace mmon::oracle {

struct AttributeInference {
    std::vector<Triple> rows;      // observed value triples, one per row
    std::vector<RuleKind> rules;   // every instantiation consistent with all of them
};

struct InferredRules {
    ConfigKind config = ConfigKind::Center;
    std::vector<std::array<AttributeInference, kAttributeCount>> components;

    const AttributeInference& at(int slot, Attribute a) const {
        return components[static_cast<std::size_t>(slot)][static_cast<std::size_t>(a)];
    }
    bool contains(int slot, Attribute a, const RuleKind& rule) const;
};

using PanelRow = std::array<const PanelSymbolic*, 3>;

/// Rules consistent with every given complete row (one or two rows).
InferredRules infer_rules(std::span<const PanelRow> rows, ConfigKind config);
InferredRules infer_rules(const PanelRow& row1, const PanelRow& row2, ConfigKind config);

/// Number of attribute groups the candidate completes consistently.
int score_candidate(const InferredRules& inferred, const PanelSymbolic& prefix1, const PanelSymbolic& prefix2,
                    const PanelSymbolic& candidate);

/// Number of attribute groups in a configuration (the maximal score).
int group_count(ConfigKind config);

/// All eight candidate scores of an instance.
std::array<int, 8> score_all(const PuzzleInstance& instance);

/// Argmax of the candidate scores. Throws AmbiguousTie if the maximum is shared.
int solve(const PuzzleInstance& instance);

}  // namespace mmon::oracle
