#pragma once

// Symbolic grammar of Raven-style puzzles: attributes, rules, configurations,
// panels, annotations and meta-targets.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmon {

enum class Attribute : std::uint8_t { Number = 0, Position = 1, Type = 2, Size = 3, Color = 4 };
inline constexpr int kAttributeCount = 5;
inline constexpr std::array<Attribute, kAttributeCount> kAllAttributes = {
    Attribute::Number, Attribute::Position, Attribute::Type, Attribute::Size, Attribute::Color};

enum class RuleFamily : std::uint8_t { Constant = 0, Progression = 1, Arithmetic = 2, DistributeThree = 3 };
inline constexpr int kRuleFamilyCount = 4;
inline constexpr std::array<RuleFamily, kRuleFamilyCount> kAllRuleFamilies = {
    RuleFamily::Constant, RuleFamily::Progression, RuleFamily::Arithmetic, RuleFamily::DistributeThree};

inline constexpr int kTypeCount = 5;   // triangle, square, pentagon, hexagon, circle
inline constexpr int kSizeCount = 6;
inline constexpr int kColorCount = 10;
inline constexpr int kMaxComponents = 2;

std::string_view attribute_name(Attribute a);
Attribute parse_attribute(std::string_view name);
std::string_view rule_family_name(RuleFamily f);
RuleFamily parse_rule_family(std::string_view name);

/// One rule instantiation: a family plus its parameter.
///
/// param meaning: Progression -> delta in {-2,-1,1,2}; Arithmetic -> +1 (plus)
/// or -1 (minus); DistributeThree -> permutation id 0 (rows rotate left) or 1
/// (rows rotate right); Constant -> 0.
struct RuleKind {
    RuleFamily family = RuleFamily::Constant;
    int param = 0;

    static constexpr RuleKind constant() { return {RuleFamily::Constant, 0}; }
    static RuleKind progression(int delta);
    static RuleKind arithmetic(int sign);
    static RuleKind distribute_three(int permutation);

    bool valid() const;
    friend bool operator==(const RuleKind&, const RuleKind&) = default;
};

/// Every instantiation of every family, in a fixed order (the oracle's grid).
std::span<const RuleKind> all_rule_instantiations();

/// Whether (attribute, family) appears in the allowed-combination table.
bool rule_allowed(Attribute attribute, RuleFamily family);

struct RuleSpec {
    int component_slot = 0;
    Attribute attribute = Attribute::Type;
    RuleKind rule;

    friend bool operator==(const RuleSpec&, const RuleSpec&) = default;
};

enum class ConfigKind : std::uint8_t {
    Center = 0,
    Grid2x2 = 1,
    Grid3x3 = 2,
    LeftRight = 3,
    UpDown = 4,
    OutInCenter = 5,
    OutInGrid = 6,
};
inline constexpr int kConfigCount = 7;
inline constexpr std::array<ConfigKind, kConfigCount> kAllConfigs = {
    ConfigKind::Center,    ConfigKind::Grid2x2,     ConfigKind::Grid3x3,  ConfigKind::LeftRight,
    ConfigKind::UpDown,    ConfigKind::OutInCenter, ConfigKind::OutInGrid};

std::string_view config_name(ConfigKind c);
ConfigKind parse_config(std::string_view name);

/// Slot bounding boxes are stored in integer units of 1/kBoxUnits of the panel
/// side so the renderer can stay integer-only.
inline constexpr int kBoxUnits = 1200;

struct Box {
    int x0, y0, x1, y1;
};

struct ComponentLayout {
    std::vector<Box> slots;
    int capacity() const { return static_cast<int>(slots.size()); }
};

struct Configuration {
    ConfigKind kind;
    std::vector<ComponentLayout> components;
    int component_count() const { return static_cast<int>(components.size()); }
};

const Configuration& configuration(ConfigKind kind);

struct Entity {
    int slot = 0;
    int type = 0;
    int size = 0;
    int color = 0;
    friend bool operator==(const Entity&, const Entity&) = default;
};

/// Entities of one component, kept sorted by slot. Within a component all
/// entities share type, size and color.
struct ComponentPanel {
    std::vector<Entity> entities;
    friend bool operator==(const ComponentPanel&, const ComponentPanel&) = default;
};

struct PanelSymbolic {
    std::vector<ComponentPanel> components;
    friend bool operator==(const PanelSymbolic&, const PanelSymbolic&) = default;
};

/// Attribute value of one component. Position is a bitmask over slots; the
/// other attributes are plain integers.
using Value = std::uint32_t;
using Triple = std::array<Value, 3>;

/// Value of `attribute` in a non-empty component.
Value attribute_value(const ComponentPanel& component, Attribute attribute);

/// Throws InvalidArgument describing the first violated panel invariant.
void validate_panel(const PanelSymbolic& panel, const Configuration& config);
bool panel_valid(const PanelSymbolic& panel, const Configuration& config);

struct RuleAnnotation {
    std::vector<RuleSpec> rules;

    const RuleSpec* find(int slot, Attribute attribute) const;
    bool contains_family(RuleFamily family) const;
    friend bool operator==(const RuleAnnotation&, const RuleAnnotation&) = default;
};

/// Multi-hot vector, component-major: component c occupies bits
/// [9c, 9c+5) for attributes (in Attribute order) and [9c+5, 9c+9) for rule
/// families (in RuleFamily order).
inline constexpr int kMetaBitsPerComponent = kAttributeCount + kRuleFamilyCount;
inline constexpr int kMetaTargetLength = kMaxComponents * kMetaBitsPerComponent;

struct MetaTarget {
    std::array<std::uint8_t, kMetaTargetLength> bits{};

    bool attribute(int slot, Attribute a) const {
        return bits[static_cast<std::size_t>(slot * kMetaBitsPerComponent + static_cast<int>(a))] != 0;
    }
    bool family(int slot, RuleFamily f) const {
        return bits[static_cast<std::size_t>(slot * kMetaBitsPerComponent + kAttributeCount +
                                             static_cast<int>(f))] != 0;
    }
    int popcount() const;
    friend bool operator==(const MetaTarget&, const MetaTarget&) = default;
};

MetaTarget encode_meta_target(const RuleAnnotation& annotation);

/// What a meta-target still says about an annotation: per component, the set
/// of governed attributes and the set of rule families present.
struct MetaSummary {
    std::array<std::array<bool, kAttributeCount>, kMaxComponents> attributes{};
    std::array<std::array<bool, kRuleFamilyCount>, kMaxComponents> families{};
    friend bool operator==(const MetaSummary&, const MetaSummary&) = default;
};

MetaSummary decode_meta_target(const MetaTarget& meta);
MetaSummary summarize_annotation(const RuleAnnotation& annotation);

inline constexpr int kPanelsPerInstance = 16;

struct PuzzleInstance {
    ConfigKind config = ConfigKind::Center;
    std::array<PanelSymbolic, 8> context;     // rows 1-2 then row 3 prefix, row-major
    std::array<PanelSymbolic, 8> candidates;
    int label = 0;
    RuleAnnotation annotation;
    MetaTarget meta;
    std::uint64_t seed = 0;

    /// The completed row 3 if candidate `k` is chosen.
    std::array<const PanelSymbolic*, 3> row(int r, int candidate = 0) const;
    friend bool operator==(const PuzzleInstance&, const PuzzleInstance&) = default;
};

}  // namespace mmon
