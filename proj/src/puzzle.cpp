#include "mmon/puzzle.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "mmon/error.hpp"

namespace mmon {

namespace {

constexpr std::array<std::string_view, kAttributeCount> kAttributeNames = {"number", "position", "type",
                                                                            "size", "color"};
constexpr std::array<std::string_view, kRuleFamilyCount> kFamilyNames = {"constant", "progression", "arithmetic",
                                                                          "distribute_three"};
constexpr std::array<std::string_view, kConfigCount> kConfigNames = {
    "center", "grid2x2", "grid3x3", "left_right", "up_down", "out_in_center", "out_in_grid"};

std::vector<Box> grid(int x0, int y0, int side, int n) {
    std::vector<Box> boxes;
    const int step = side / n;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            boxes.push_back({x0 + c * step, y0 + r * step, x0 + (c + 1) * step, y0 + (r + 1) * step});
        }
    }
    return boxes;
}

std::array<Configuration, kConfigCount> build_configurations() {
    constexpr int U = kBoxUnits;
    const ComponentLayout whole{{{0, 0, U, U}}};
    return {{
        {ConfigKind::Center, {whole}},
        {ConfigKind::Grid2x2, {{grid(0, 0, U, 2)}}},
        {ConfigKind::Grid3x3, {{grid(0, 0, U, 3)}}},
        {ConfigKind::LeftRight, {{{{0, U / 4, U / 2, 3 * U / 4}}}, {{{U / 2, U / 4, U, 3 * U / 4}}}}},
        {ConfigKind::UpDown, {{{{U / 4, 0, 3 * U / 4, U / 2}}}, {{{U / 4, U / 2, 3 * U / 4, U}}}}},
        {ConfigKind::OutInCenter, {whole, {{{U / 3, U / 3, 2 * U / 3, 2 * U / 3}}}}},
        {ConfigKind::OutInGrid, {whole, {grid(U / 4, U / 4, U / 2, 2)}}},
    }};
}

template <std::size_t N>
std::size_t lookup(const std::array<std::string_view, N>& names, std::string_view name, const char* what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == name) return i;
    }
    throw InvalidArgument(std::string("unknown ") + what + ": '" + std::string(name) + "'");
}

}  // namespace

std::string_view attribute_name(Attribute a) { return kAttributeNames[static_cast<std::size_t>(a)]; }
Attribute parse_attribute(std::string_view name) {
    return static_cast<Attribute>(lookup(kAttributeNames, name, "attribute"));
}
std::string_view rule_family_name(RuleFamily f) { return kFamilyNames[static_cast<std::size_t>(f)]; }
RuleFamily parse_rule_family(std::string_view name) {
    return static_cast<RuleFamily>(lookup(kFamilyNames, name, "rule family"));
}
std::string_view config_name(ConfigKind c) { return kConfigNames[static_cast<std::size_t>(c)]; }
ConfigKind parse_config(std::string_view name) {
    return static_cast<ConfigKind>(lookup(kConfigNames, name, "configuration"));
}

RuleKind RuleKind::progression(int delta) {
    RuleKind r{RuleFamily::Progression, delta};
    if (!r.valid()) throw InvalidArgument("progression delta must be one of -2,-1,1,2");
    return r;
}

RuleKind RuleKind::arithmetic(int sign) {
    RuleKind r{RuleFamily::Arithmetic, sign};
    if (!r.valid()) throw InvalidArgument("arithmetic sign must be +1 or -1");
    return r;
}

RuleKind RuleKind::distribute_three(int permutation) {
    RuleKind r{RuleFamily::DistributeThree, permutation};
    if (!r.valid()) throw InvalidArgument("distribute-three permutation must be 0 or 1");
    return r;
}

bool RuleKind::valid() const {
    switch (family) {
        case RuleFamily::Constant: return param == 0;
        case RuleFamily::Progression: return param == -2 || param == -1 || param == 1 || param == 2;
        case RuleFamily::Arithmetic: return param == 1 || param == -1;
        case RuleFamily::DistributeThree: return param == 0 || param == 1;
    }
    return false;
}

std::span<const RuleKind> all_rule_instantiations() {
    static const std::array<RuleKind, 9> grid = {{
        {RuleFamily::Constant, 0},
        {RuleFamily::Progression, -2},
        {RuleFamily::Progression, -1},
        {RuleFamily::Progression, 1},
        {RuleFamily::Progression, 2},
        {RuleFamily::Arithmetic, 1},
        {RuleFamily::Arithmetic, -1},
        {RuleFamily::DistributeThree, 0},
        {RuleFamily::DistributeThree, 1},
    }};
    return grid;
}

bool rule_allowed(Attribute attribute, RuleFamily family) {
    return !(attribute == Attribute::Type && family == RuleFamily::Arithmetic);
}

const Configuration& configuration(ConfigKind kind) {
    static const auto table = build_configurations();
    return table[static_cast<std::size_t>(kind)];
}

Value attribute_value(const ComponentPanel& component, Attribute attribute) {
    if (component.entities.empty()) throw InvalidArgument("attribute of an empty component");
    const Entity& first = component.entities.front();
    switch (attribute) {
        case Attribute::Number: return static_cast<Value>(component.entities.size());
        case Attribute::Position: {
            Value mask = 0;
            for (const Entity& e : component.entities) mask |= Value{1} << e.slot;
            return mask;
        }
        case Attribute::Type: return static_cast<Value>(first.type);
        case Attribute::Size: return static_cast<Value>(first.size);
        case Attribute::Color: return static_cast<Value>(first.color);
    }
    return 0;
}

void validate_panel(const PanelSymbolic& panel, const Configuration& config) {
    if (panel.components.size() != config.components.size()) {
        throw InvalidArgument("panel has " + std::to_string(panel.components.size()) + " components, expected " +
                              std::to_string(config.components.size()));
    }
    for (std::size_t c = 0; c < panel.components.size(); ++c) {
        const auto& entities = panel.components[c].entities;
        const int capacity = config.components[c].capacity();
        if (entities.empty()) throw InvalidArgument("component " + std::to_string(c) + " is empty");
        if (static_cast<int>(entities.size()) > capacity) throw InvalidArgument("too many entities");
        for (std::size_t i = 0; i < entities.size(); ++i) {
            const Entity& e = entities[i];
            if (e.slot < 0 || e.slot >= capacity) throw InvalidArgument("slot index out of range");
            if (i > 0 && entities[i - 1].slot >= e.slot) {
                throw InvalidArgument("slots must be unique and ascending");
            }
            if (e.type < 0 || e.type >= kTypeCount || e.size < 0 || e.size >= kSizeCount || e.color < 0 ||
                e.color >= kColorCount) {
                throw InvalidArgument("entity attribute out of domain");
            }
            if (e.type != entities[0].type || e.size != entities[0].size || e.color != entities[0].color) {
                throw InvalidArgument("entities of one component must share type, size and color");
            }
        }
    }
}

bool panel_valid(const PanelSymbolic& panel, const Configuration& config) {
    try {
        validate_panel(panel, config);
        return true;
    } catch (const InvalidArgument&) {
        return false;
    }
}

const RuleSpec* RuleAnnotation::find(int slot, Attribute attribute) const {
    for (const RuleSpec& r : rules) {
        if (r.component_slot == slot && r.attribute == attribute) return &r;
    }
    return nullptr;
}

bool RuleAnnotation::contains_family(RuleFamily family) const {
    return std::any_of(rules.begin(), rules.end(), [&](const RuleSpec& r) { return r.rule.family == family; });
}

int MetaTarget::popcount() const {
    return static_cast<int>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

MetaTarget encode_meta_target(const RuleAnnotation& annotation) {
    MetaTarget meta;
    for (const RuleSpec& r : annotation.rules) {
        if (r.component_slot < 0 || r.component_slot >= kMaxComponents) {
            throw InvalidArgument("rule component slot out of range");
        }
        const int base = r.component_slot * kMetaBitsPerComponent;
        meta.bits[static_cast<std::size_t>(base + static_cast<int>(r.attribute))] = 1;
        meta.bits[static_cast<std::size_t>(base + kAttributeCount + static_cast<int>(r.rule.family))] = 1;
    }
    return meta;
}

MetaSummary decode_meta_target(const MetaTarget& meta) {
    MetaSummary s;
    for (int c = 0; c < kMaxComponents; ++c) {
        for (Attribute a : kAllAttributes) s.attributes[c][static_cast<std::size_t>(a)] = meta.attribute(c, a);
        for (RuleFamily f : kAllRuleFamilies) s.families[c][static_cast<std::size_t>(f)] = meta.family(c, f);
    }
    return s;
}

MetaSummary summarize_annotation(const RuleAnnotation& annotation) {
    MetaSummary s;
    for (const RuleSpec& r : annotation.rules) {
        s.attributes[r.component_slot][static_cast<std::size_t>(r.attribute)] = true;
        s.families[r.component_slot][static_cast<std::size_t>(r.rule.family)] = true;
    }
    return s;
}

std::array<const PanelSymbolic*, 3> PuzzleInstance::row(int r, int candidate) const {
    if (r < 0 || r > 2) throw InvalidArgument("row index out of range");
    if (r < 2) return {&context[r * 3], &context[r * 3 + 1], &context[r * 3 + 2]};
    return {&context[6], &context[7], &candidates[static_cast<std::size_t>(candidate)]};
}

}  // namespace mmon
