#include "mmon/rules.hpp"

#include <bit>

#include "mmon/error.hpp"

namespace mmon {

namespace {

constexpr int kMaxAttempts = 1000;

Value full_mask(int capacity) { return (Value{1} << capacity) - 1; }

Value draw_value(Attribute attribute, Rng& rng, int capacity) {
    switch (attribute) {
        case Attribute::Number: return static_cast<Value>(rng.uniform_int(1, capacity));
        case Attribute::Position: return static_cast<Value>(rng.uniform_int(1, static_cast<int>(full_mask(capacity))));
        case Attribute::Type: return static_cast<Value>(rng.uniform_int(0, kTypeCount - 1));
        case Attribute::Size: return static_cast<Value>(rng.uniform_int(0, kSizeCount - 1));
        case Attribute::Color: return static_cast<Value>(rng.uniform_int(0, kColorCount - 1));
    }
    return 0;
}

std::optional<Value> step(Attribute attribute, Value v, int delta, int capacity) {
    if (attribute == Attribute::Position) return shift_positions(v, delta, capacity);
    if (attribute == Attribute::Type) return static_cast<Value>(((static_cast<int>(v) + delta) % kTypeCount + kTypeCount) % kTypeCount);
    const long next = static_cast<long>(v) + delta;
    if (next < 0) return std::nullopt;
    const auto out = static_cast<Value>(next);
    if (!value_in_domain(attribute, out, capacity)) return std::nullopt;
    return out;
}

}  // namespace

Value shift_positions(Value mask, int delta, int capacity) {
    Value out = 0;
    for (int s = 0; s < capacity; ++s) {
        if ((mask >> s) & 1U) {
            const int t = ((s + delta) % capacity + capacity) % capacity;
            out |= Value{1} << t;
        }
    }
    return out;
}

bool value_in_domain(Attribute attribute, Value v, int capacity) {
    switch (attribute) {
        case Attribute::Number: return v >= 1 && static_cast<int>(v) <= capacity;
        case Attribute::Position: return v != 0 && v <= full_mask(capacity);
        case Attribute::Type: return v < static_cast<Value>(kTypeCount);
        case Attribute::Size: return v < static_cast<Value>(kSizeCount);
        case Attribute::Color: return v < static_cast<Value>(kColorCount);
    }
    return false;
}

std::vector<Value> attribute_domain(Attribute attribute, int capacity) {
    std::vector<Value> out;
    const Value hi = attribute == Attribute::Position ? full_mask(capacity) : 16U;
    for (Value v = 0; v <= hi; ++v) {
        if (value_in_domain(attribute, v, capacity)) out.push_back(v);
    }
    return out;
}

std::optional<Value> complete_row(Attribute attribute, const RuleKind& rule, Value v1, Value v2, int capacity) {
    if (!value_in_domain(attribute, v1, capacity) || !value_in_domain(attribute, v2, capacity)) return std::nullopt;
    switch (rule.family) {
        case RuleFamily::Constant:
            if (v1 != v2) return std::nullopt;
            return v2;
        case RuleFamily::Progression: {
            const auto expect = step(attribute, v1, rule.param, capacity);
            if (!expect || *expect != v2) return std::nullopt;
            auto v3 = step(attribute, v2, rule.param, capacity);
            if (v3 && !value_in_domain(attribute, *v3, capacity)) return std::nullopt;
            return v3;
        }
        case RuleFamily::Arithmetic: {
            if (!rule_allowed(attribute, rule.family)) return std::nullopt;
            Value v3 = 0;
            if (attribute == Attribute::Position) {
                v3 = rule.param > 0 ? (v1 | v2) : (v1 & ~v2);
            } else {
                const long r = rule.param > 0 ? static_cast<long>(v1) + v2 : static_cast<long>(v1) - v2;
                if (r < 0) return std::nullopt;
                v3 = static_cast<Value>(r);
            }
            if (!value_in_domain(attribute, v3, capacity)) return std::nullopt;
            return v3;
        }
        case RuleFamily::DistributeThree: return std::nullopt;
    }
    return std::nullopt;
}

bool rule_satisfied(const RuleSpec& rule, const Triple& values, int capacity) {
    for (Value v : values) {
        if (!value_in_domain(rule.attribute, v, capacity)) return false;
    }
    if (!rule.rule.valid() || !rule_allowed(rule.attribute, rule.rule.family)) return false;
    if (rule.rule.family == RuleFamily::DistributeThree) {
        return values[0] != values[1] && values[1] != values[2] && values[0] != values[2];
    }
    const auto v3 = complete_row(rule.attribute, rule.rule, values[0], values[1], capacity);
    return v3 && *v3 == values[2];
}

Triple rotate_row(const Triple& row, int permutation) {
    return permutation == 0 ? Triple{row[1], row[2], row[0]} : Triple{row[2], row[0], row[1]};
}

bool rule_holds(Attribute attribute, const RuleKind& rule, std::span<const Triple> rows, int capacity) {
    const RuleSpec spec{0, attribute, rule};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rule_satisfied(spec, rows[i], capacity)) return false;
        if (rule.family == RuleFamily::DistributeThree && i > 0 && rows[i] != rotate_row(rows[i - 1], rule.param)) {
            return false;
        }
    }
    return true;
}

Triple sample_row_values(const RuleSpec& rule, Rng& rng, int capacity) {
    const Attribute a = rule.attribute;
    if (!rule.rule.valid() || !rule_allowed(a, rule.rule.family)) {
        throw InvalidArgument("rule not allowed on attribute " + std::string(attribute_name(a)));
    }
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const Value v1 = draw_value(a, rng, capacity);
        switch (rule.rule.family) {
            case RuleFamily::Constant: return {v1, v1, v1};
            case RuleFamily::Progression: {
                const auto v2 = step(a, v1, rule.rule.param, capacity);
                if (!v2 || *v2 == v1) continue;  // shift-invariant position sets look constant
                const auto v3 = complete_row(a, rule.rule, v1, *v2, capacity);
                if (v3) return {v1, *v2, *v3};
                break;
            }
            case RuleFamily::Arithmetic: {
                const Value v2 = draw_value(a, rng, capacity);
                const auto v3 = complete_row(a, rule.rule, v1, v2, capacity);
                if (v3) return {v1, v2, *v3};
                break;
            }
            case RuleFamily::DistributeThree: {
                const Value v2 = draw_value(a, rng, capacity);
                const Value v3 = draw_value(a, rng, capacity);
                if (v1 != v2 && v2 != v3 && v1 != v3) return {v1, v2, v3};
                break;
            }
        }
    }
    throw DomainExhausted("no valid row for " + std::string(rule_family_name(rule.rule.family)) + " on " +
                          std::string(attribute_name(a)));
}

std::array<Triple, 3> sample_matrix_values(const RuleSpec& rule, Rng& rng, int capacity) {
    std::array<Triple, 3> rows{};
    rows[0] = sample_row_values(rule, rng, capacity);
    for (std::size_t r = 1; r < 3; ++r) {
        rows[r] = rule.rule.family == RuleFamily::DistributeThree ? rotate_row(rows[r - 1], rule.rule.param)
                                                                  : sample_row_values(rule, rng, capacity);
    }
    return rows;
}

}  // namespace mmon
