#include "mmon/oracle.hpp"

#include <algorithm>
#include <string>

#include "mmon/error.hpp"
#include "mmon/rules.hpp"

namespace mmon::oracle {

namespace {

Triple row_values(const PanelRow& row, int slot, Attribute a) {
    Triple t{};
    for (std::size_t i = 0; i < 3; ++i) {
        t[i] = attribute_value(row[i]->components[static_cast<std::size_t>(slot)], a);
    }
    return t;
}

bool any_rule_completes(const AttributeInference& inf, Attribute a, const Triple& row3, int capacity) {
    std::vector<Triple> rows = inf.rows;
    rows.push_back(row3);
    return std::any_of(inf.rules.begin(), inf.rules.end(),
                       [&](const RuleKind& r) { return rule_holds(a, r, rows, capacity); });
}

}  // namespace

bool InferredRules::contains(int slot, Attribute a, const RuleKind& rule) const {
    const auto& rules = at(slot, a).rules;
    return std::find(rules.begin(), rules.end(), rule) != rules.end();
}

InferredRules infer_rules(std::span<const PanelRow> rows, ConfigKind config) {
    const Configuration& cfg = configuration(config);
    InferredRules out;
    out.config = config;
    out.components.resize(static_cast<std::size_t>(cfg.component_count()));
    for (int c = 0; c < cfg.component_count(); ++c) {
        const int capacity = cfg.components[static_cast<std::size_t>(c)].capacity();
        for (Attribute a : kAllAttributes) {
            AttributeInference& inf = out.components[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)];
            for (const PanelRow& row : rows) inf.rows.push_back(row_values(row, c, a));
            for (const RuleKind& r : all_rule_instantiations()) {
                if (rule_allowed(a, r.family) && rule_holds(a, r, inf.rows, capacity)) inf.rules.push_back(r);
            }
        }
    }
    return out;
}

InferredRules infer_rules(const PanelRow& row1, const PanelRow& row2, ConfigKind config) {
    const std::array<PanelRow, 2> rows{row1, row2};
    return infer_rules(rows, config);
}

int score_candidate(const InferredRules& inferred, const PanelSymbolic& prefix1, const PanelSymbolic& prefix2,
                    const PanelSymbolic& candidate) {
    const Configuration& cfg = configuration(inferred.config);
    const PanelRow row3{&prefix1, &prefix2, &candidate};
    int score = 0;
    for (int c = 0; c < cfg.component_count(); ++c) {
        const int capacity = cfg.components[static_cast<std::size_t>(c)].capacity();
        auto completes = [&](Attribute a) {
            return any_rule_completes(inferred.at(c, a), a, row_values(row3, c, a), capacity);
        };
        if (capacity > 1 && (completes(Attribute::Number) || completes(Attribute::Position))) ++score;
        for (Attribute a : {Attribute::Type, Attribute::Size, Attribute::Color}) {
            if (completes(a)) ++score;
        }
    }
    return score;
}

int group_count(ConfigKind config) {
    int n = 0;
    for (const ComponentLayout& comp : configuration(config).components) n += comp.capacity() > 1 ? 4 : 3;
    return n;
}

std::array<int, 8> score_all(const PuzzleInstance& instance) {
    const InferredRules inferred = infer_rules(instance.row(0), instance.row(1), instance.config);
    std::array<int, 8> scores{};
    for (std::size_t k = 0; k < 8; ++k) {
        scores[k] = score_candidate(inferred, instance.context[6], instance.context[7], instance.candidates[k]);
    }
    return scores;
}

int solve(const PuzzleInstance& instance) {
    const auto scores = score_all(instance);
    const auto best = std::max_element(scores.begin(), scores.end());
    if (std::count(scores.begin(), scores.end(), *best) > 1) {
        throw AmbiguousTie("top oracle score " + std::to_string(*best) + " shared by several candidates (seed " +
                           std::to_string(instance.seed) + ")");
    }
    return static_cast<int>(best - scores.begin());
}

}  // namespace mmon::oracle
