#pragma once

// Multi-granularity perception with per-attribute reasoning modules.
//
// Every row of the matrix (rows 1 and 2, plus row 3 completed by each of the
// eight candidates) is embedded as e = M_p + M_r + M_o:
//   M_p  relation head over the six ordered panel pairs of the row (Enc1)
//   M_r  the three panels stacked as channels (Enc3)
//   M_o  the two other rows stacked as six channels (Enc6)
// Attribute modules map e to transformation embeddings; candidates are scored
// by cosine agreement with rows 1-2 and with rule embeddings.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmon/adam.hpp"
#include "mmon/checkpoint.hpp"
#include "mmon/puzzle.hpp"
#include "mmon/render.hpp"
#include "mmon/tensor.hpp"

namespace mmon::model {

using ag::Tape;
using ag::Tensor;

inline constexpr int kModuleCount = kMaxComponents * kAttributeCount;

constexpr int module_index(int slot, Attribute a) { return slot * kAttributeCount + static_cast<int>(a); }

struct ModelConfig {
    int d = 64;
    int dt = 32;
    int relation_hidden = 128;
    int module_hidden = 64;
    int conv1_channels = 16;
    int conv2_channels = 32;
};

/// x W + b with W stored [in x out].
struct Linear {
    Tensor w;
    Tensor b;
};

struct Mlp {
    Linear l1;
    Linear l2;
};

/// conv 3x3 stride 2 -> relu -> conv 3x3 stride 2 -> relu -> mean pool -> linear.
struct Encoder {
    Tensor k1, b1, k2, b2;
    Linear proj;
};

class Params {
public:
    /// He-uniform weights, zero biases, orthonormal rule-table rows.
    Params(ModelConfig config, std::uint64_t seed);

    ModelConfig config;
    Encoder enc1, enc3, enc6;
    Mlp g, f;
    std::array<Mlp, kModuleCount> modules;
    Tensor rule_table;  // [4 x dt]

    /// Stable order shared by tensors(), named() and module_of().
    std::vector<Tensor> tensors() const;
    ag::NamedTensors named() const;
    /// Attribute-module index owning each tensor, or -1.
    std::vector<int> module_of() const;

    /// Copies values in; names and shapes must match (FormatError).
    void assign(const ag::NamedTensors& tensors);
    Params clone() const;
};

void save_params(const std::filesystem::path& file, const Params& params);
/// Throws FormatError when the checkpoint does not describe a model.
Params load_params(const std::filesystem::path& file);

enum class Mode { Plain, Meta };

std::string_view mode_name(Mode m);
Mode parse_mode(std::string_view name);

/// Ink darkness (255 - p) / 64 for every pixel, so a full-ink pixel is near 4;
/// panels stacked as [n x 1 x H x W].
Tensor panels_tensor(std::span<const render::Raster> panels);

// Single-row encoders. `row` is [3 x 1 x H x W].
Tensor encode_panelwise(Tape& t, const Tensor& row, const Params& p);
Tensor encode_rowwise(Tape& t, const Tensor& row, const Params& p);
/// (M_o[1], M_o[2], M_o[3]) for rows r1, r2 and a completed third row.
std::array<Tensor, 3> encode_overall(Tape& t, const Tensor& r1, const Tensor& r2, const Tensor& r3, const Params& p);

struct ActiveModule {
    int module = 0;        // module_index(slot, attribute)
    RuleFamily target{};   // annotated rule family; meaningful in meta mode
};

/// Modules scored for an instance. Meta mode: the annotated (slot, attribute)
/// pairs in annotation order. Plain mode: every attribute the configuration
/// can vary (Number and Position only for multi-slot components).
std::vector<ActiveModule> active_modules(Mode mode, ConfigKind config, const RuleAnnotation* annotation);

struct Transform {
    std::vector<Tensor> outputs;  // f_j(e) per active module, same row count as e
    Tensor tau;                   // sum of outputs
};

/// e is [n x d]; outputs are [n x dt].
Transform module_transform(Tape& t, const Tensor& e, const Params& p, std::span<const ActiveModule> active);

struct RuleChoice {
    int index = 0;
    double similarity = 0.0;
};

/// Most similar rule-table row to a module output (lowest index on ties).
RuleChoice infer_rule(std::span<const double> output, const Tensor& table);

struct ScoreVector {
    Tensor s;                          // [8]
    std::vector<ActiveModule> active;
    // Row embeddings; rows 1 and 2 depend on the candidate through M_o.
    Tensor mp, mr, mo;                 // [10 x d], [10 x d], [17 x d]
    std::array<Tensor, 3> e;           // [8 x d] each
    std::array<Tensor, 3> tau;         // [8 x dt] each
    std::vector<std::array<Tensor, 3>> outputs;  // per active module, [8 x dt] per row
    Tensor base;                       // [8]
    std::vector<Tensor> rule_terms;    // per active module, [8]
    std::vector<std::array<int, 8>> selected_rules;  // infer_rule on row 3, per module and candidate
    Tensor alignment;                  // mean 1 - cos(f_j(e_i), t*_j) over rows 1-2; meta only
};

/// `panels` is [16 x 1 x H x W] (context then candidates). Meta mode needs the
/// annotation (MissingMeta otherwise).
ScoreVector score_candidates(Tape& t, const Tensor& panels, ConfigKind config, const Params& p, Mode mode,
                             const RuleAnnotation* annotation);

/// Argmax, lowest index on ties.
int predict(std::span<const double> s);

/// CE(s, y) + lambda (sum_{i != y} s_i - s_y). Throws BadIndex.
Tensor loss(Tape& t, const Tensor& s, int y, double lambda);

struct TrainSettings {
    Mode mode = Mode::Meta;
    double lambda = 0.01;
    double mu = 0.1;
};

struct Example {
    std::span<const render::Raster> panels;  // 16
    ConfigKind config = ConfigKind::Center;
    const RuleAnnotation* annotation = nullptr;
    MetaTarget meta;
    int label = 0;
};

struct StepResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::array<bool, kModuleCount> frozen{};
};

/// Which modules a meta-mode step leaves untouched: those whose (slot,
/// attribute) is absent from every meta-target of the batch.
std::array<bool, kModuleCount> frozen_modules(std::span<const Example> batch);

/// Mean loss over the batch, one Adam step. In meta mode the modules from
/// frozen_modules() are excluded from the update and stay bit-identical.
StepResult masked_train_step(std::span<const Example> batch, Params& params, ag::AdamState& state,
                             const TrainSettings& settings);

}  // namespace mmon::model
