#pragma once

// Rule semantics over attribute value triples.
//
// Constant: v1 = v2 = v3.
// Progression(d): v2 = v1 + d, v3 = v2 + d. Type wraps mod 5; Position is a
// cyclic shift of the slot set by d.
// Arithmetic(+/-): v3 = v1 + v2 or v1 - v2, result inside the domain. For
// Position, plus is set union and minus is set difference.
// DistributeThree(p): three distinct values per row; each row is the previous
// row rotated left (p = 0) or right (p = 1).

#include <optional>
#include <span>

#include "mmon/puzzle.hpp"
#include "mmon/rng.hpp"

namespace mmon {

/// Cyclic shift of a slot mask by `delta` within `capacity` slots.
Value shift_positions(Value mask, int delta, int capacity);

/// Whether `v` lies in the attribute's domain for a component with
/// `capacity` slots.
bool value_in_domain(Attribute attribute, Value v, int capacity);

/// All domain values of an attribute, ascending.
std::vector<Value> attribute_domain(Attribute attribute, int capacity);

/// For row-local families, the unique third value completing (v1, v2), if any.
/// DistributeThree is not row-local and returns nullopt.
std::optional<Value> complete_row(Attribute attribute, const RuleKind& rule, Value v1, Value v2, int capacity);

/// Single-row semantics. For DistributeThree this checks the three values are
/// distinct; the cross-row rotation is checked by rule_holds.
bool rule_satisfied(const RuleSpec& rule, const Triple& values, int capacity = 1);

/// Matrix semantics over consecutive rows (1, 2 or 3 of them).
bool rule_holds(Attribute attribute, const RuleKind& rule, std::span<const Triple> rows, int capacity);
inline bool rule_holds(const RuleSpec& rule, std::span<const Triple> rows, int capacity) {
    return rule_holds(rule.attribute, rule.rule, rows, capacity);
}

/// Rotate a row one step in the direction of a DistributeThree permutation.
Triple rotate_row(const Triple& row, int permutation);

/// One row satisfying a row-local rule, uniformly over all valid rows.
/// Throws DomainExhausted when the parameters admit no row.
Triple sample_row_values(const RuleSpec& rule, Rng& rng, int capacity = 1);

/// Three rows satisfying the rule under matrix semantics.
std::array<Triple, 3> sample_matrix_values(const RuleSpec& rule, Rng& rng, int capacity = 1);

}  // namespace mmon
