#include "mmon/generator.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <string>

#include "mmon/error.hpp"
#include "mmon/oracle.hpp"
#include "mmon/rules.hpp"

namespace mmon {

namespace {

constexpr int kMaxAttempts = 1000;
constexpr std::array<int, 4> kDeltas = {-2, -1, 1, 2};

RuleKind sample_rule(Attribute a, Rng& rng, bool allow_constant) {
    std::vector<RuleFamily> families;
    for (RuleFamily f : kAllRuleFamilies) {
        if (rule_allowed(a, f) && (allow_constant || f != RuleFamily::Constant)) families.push_back(f);
    }
    switch (families[static_cast<std::size_t>(rng.below(families.size()))]) {
        case RuleFamily::Constant: return RuleKind::constant();
        case RuleFamily::Progression: return RuleKind::progression(kDeltas[rng.below(kDeltas.size())]);
        case RuleFamily::Arithmetic: return RuleKind::arithmetic(rng.coin() ? 1 : -1);
        case RuleFamily::DistributeThree: return RuleKind::distribute_three(rng.coin() ? 1 : 0);
    }
    return RuleKind::constant();
}

std::vector<Entity> layout_entities(Value mask) {
    std::vector<Entity> out;
    for (int s = 0; s < 32; ++s) {
        if ((mask >> s) & 1U) out.push_back({s, 0, 0, 0});
    }
    return out;
}

Value random_mask_of_count(int count, int capacity, Rng& rng) {
    std::vector<int> slots(static_cast<std::size_t>(capacity));
    std::iota(slots.begin(), slots.end(), 0);
    rng.shuffle(std::span<int>(slots));
    Value mask = 0;
    for (int i = 0; i < count; ++i) mask |= Value{1} << slots[static_cast<std::size_t>(i)];
    return mask;
}

void set_appearance(ComponentPanel& comp, int type, int size, int color) {
    for (Entity& e : comp.entities) {
        e.type = type;
        e.size = size;
        e.color = color;
    }
}

// Replace the layout of a component keeping its shared appearance.
void set_layout(ComponentPanel& comp, Value mask) {
    const Entity look = comp.entities.empty() ? Entity{} : comp.entities.front();
    comp.entities = layout_entities(mask);
    set_appearance(comp, look.type, look.size, look.color);
}

using Matrix = std::array<std::array<Triple, 3>, kAttributeCount>;

// The nine panels of a complete matrix, row-major.
std::array<PanelSymbolic, 9> build_matrix(const RuleAnnotation& annotation, const Configuration& cfg, Rng& rng) {
    std::array<PanelSymbolic, 9> panels;
    for (auto& p : panels) p.components.resize(static_cast<std::size_t>(cfg.component_count()));
    for (int c = 0; c < cfg.component_count(); ++c) {
        const int capacity = cfg.components[static_cast<std::size_t>(c)].capacity();
        Matrix values{};
        for (const RuleSpec& r : annotation.rules) {
            if (r.component_slot == c) {
                values[static_cast<std::size_t>(r.attribute)] = sample_matrix_values(r, rng, capacity);
            }
        }
        const RuleSpec* number_rule = annotation.find(c, Attribute::Number);
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t col = 0; col < 3; ++col) {
                ComponentPanel& comp = panels[r * 3 + col].components[static_cast<std::size_t>(c)];
                Value mask = 1;
                if (capacity > 1) {
                    mask = number_rule != nullptr
                               ? random_mask_of_count(static_cast<int>(values[0][r][col]), capacity, rng)
                               : values[static_cast<std::size_t>(Attribute::Position)][r][col];
                }
                comp.entities = layout_entities(mask);
                set_appearance(comp, static_cast<int>(values[2][r][col]), static_cast<int>(values[3][r][col]),
                               static_cast<int>(values[4][r][col]));
            }
        }
    }
    return panels;
}

struct MutationSite {
    int slot;
    Attribute attribute;
};

std::vector<MutationSite> mutation_sites(const PanelSymbolic& answer, const Configuration& cfg) {
    std::vector<MutationSite> sites;
    for (int c = 0; c < cfg.component_count(); ++c) {
        const int capacity = cfg.components[static_cast<std::size_t>(c)].capacity();
        if (capacity > 1) {
            sites.push_back({c, Attribute::Number});
            const auto count = static_cast<int>(answer.components[static_cast<std::size_t>(c)].entities.size());
            if (count < capacity) sites.push_back({c, Attribute::Position});
        }
        for (Attribute a : {Attribute::Type, Attribute::Size, Attribute::Color}) sites.push_back({c, a});
    }
    return sites;
}

void mutate(PanelSymbolic& panel, const MutationSite& site, const Configuration& cfg, Rng& rng) {
    ComponentPanel& comp = panel.components[static_cast<std::size_t>(site.slot)];
    const int capacity = cfg.components[static_cast<std::size_t>(site.slot)].capacity();
    const Value current = attribute_value(comp, site.attribute);
    auto other_value = [&](int lo, int hi) {
        int v = rng.uniform_int(lo, hi - 1);
        if (v >= static_cast<int>(current)) ++v;
        return v;
    };
    const Entity look = comp.entities.front();
    switch (site.attribute) {
        case Attribute::Number:
            set_layout(comp, random_mask_of_count(other_value(1, capacity), capacity, rng));
            break;
        case Attribute::Position: {
            const int count = std::popcount(current);
            if (count == capacity) break;  // an earlier Number mutation filled every slot
            Value mask = current;
            while (mask == current) mask = random_mask_of_count(count, capacity, rng);
            set_layout(comp, mask);
            break;
        }
        case Attribute::Type: set_appearance(comp, other_value(0, kTypeCount - 1), look.size, look.color); break;
        case Attribute::Size: set_appearance(comp, look.type, other_value(0, kSizeCount - 1), look.color); break;
        case Attribute::Color: set_appearance(comp, look.type, look.size, other_value(0, kColorCount - 1)); break;
    }
}

}  // namespace

RuleAnnotation sample_rule_annotation(ConfigKind config, Rng& rng) {
    const Configuration& cfg = configuration(config);
    RuleAnnotation ann;
    for (int c = 0; c < cfg.component_count(); ++c) {
        if (cfg.components[static_cast<std::size_t>(c)].capacity() > 1) {
            const Attribute layout = rng.coin() ? Attribute::Position : Attribute::Number;
            ann.rules.push_back({c, layout, sample_rule(layout, rng, false)});
        }
        for (Attribute a : {Attribute::Type, Attribute::Size, Attribute::Color}) {
            ann.rules.push_back({c, a, sample_rule(a, rng, true)});
        }
    }
    return ann;
}

bool violates_annotation(const RuleAnnotation& annotation, std::span<const PanelSymbolic, 8> context,
                         const PanelSymbolic& candidate, ConfigKind config) {
    const Configuration& cfg = configuration(config);
    for (const RuleSpec& r : annotation.rules) {
        const auto slot = static_cast<std::size_t>(r.component_slot);
        std::array<Triple, 3> rows{};
        for (std::size_t i = 0; i < 9; ++i) {
            const PanelSymbolic& p = i < 8 ? context[i] : candidate;
            rows[i / 3][i % 3] = attribute_value(p.components[slot], r.attribute);
        }
        if (!rule_holds(r, rows, cfg.components[slot].capacity())) return true;
    }
    return false;
}

CandidateSet generate_candidates(const PanelSymbolic& answer, const RuleAnnotation& annotation,
                                 std::span<const PanelSymbolic, 8> context, ConfigKind config, Rng& rng) {
    const Configuration& cfg = configuration(config);
    const oracle::PanelRow row1{&context[0], &context[1], &context[2]};
    const oracle::PanelRow row2{&context[3], &context[4], &context[5]};
    const auto inferred = oracle::infer_rules(row1, row2, config);
    const int answer_score = oracle::score_candidate(inferred, context[6], context[7], answer);
    const auto sites = mutation_sites(answer, cfg);

    std::vector<PanelSymbolic> distractors;
    int attempts = 0;
    while (distractors.size() < 7) {
        if (++attempts > kMaxAttempts) throw GenerationRetryExceeded("could not find 7 distinct distractors");
        std::vector<MutationSite> chosen = sites;
        rng.shuffle(std::span<MutationSite>(chosen));
        const int k = std::min(rng.uniform_int(1, 3), static_cast<int>(chosen.size()));
        PanelSymbolic mutant = answer;
        for (int i = 0; i < k; ++i) mutate(mutant, chosen[static_cast<std::size_t>(i)], cfg, rng);

        if (mutant == answer || std::find(distractors.begin(), distractors.end(), mutant) != distractors.end()) {
            continue;
        }
        if (!violates_annotation(annotation, context, mutant, config)) continue;
        if (oracle::score_candidate(inferred, context[6], context[7], mutant) >= answer_score) continue;
        distractors.push_back(std::move(mutant));
    }

    CandidateSet out;
    out.label = static_cast<int>(rng.below(8));
    for (std::size_t k = 0, d = 0; k < 8; ++k) {
        out.candidates[k] = static_cast<int>(k) == out.label ? answer : distractors[d++];
    }
    return out;
}

PuzzleInstance generate_puzzle(ConfigKind config, std::uint64_t seed) {
    const Configuration& cfg = configuration(config);
    Rng rng(derive_seed(seed, 0x52504d00ULL + static_cast<std::uint64_t>(config)));
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const RuleAnnotation annotation = sample_rule_annotation(config, rng);
        std::array<PanelSymbolic, 9> panels;
        try {
            panels = build_matrix(annotation, cfg, rng);
        } catch (const DomainExhausted&) {
            continue;
        }
        PuzzleInstance inst;
        inst.config = config;
        inst.seed = seed;
        inst.annotation = annotation;
        inst.meta = encode_meta_target(annotation);
        std::copy(panels.begin(), panels.begin() + 8, inst.context.begin());
        try {
            CandidateSet cs = generate_candidates(panels[8], annotation, inst.context, config, rng);
            inst.candidates = std::move(cs.candidates);
            inst.label = cs.label;
        } catch (const GenerationRetryExceeded&) {
            continue;
        }
        return inst;
    }
    throw GenerationRetryExceeded("generation failed for " + std::string(config_name(config)) + " seed " +
                                  std::to_string(seed));
}

std::vector<PuzzleInstance> generate_corpus(ConfigKind config, std::size_t n, std::uint64_t master_seed) {
    std::vector<PuzzleInstance> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_puzzle(config, derive_seed(master_seed, i)));
    return out;
}

}  // namespace mmon
