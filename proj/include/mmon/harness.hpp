#pragma once

// Experiment plumbing: splits, the training loop, evaluation, the two
// generalization protocols and report files.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmon/dataset_io.hpp"
#include "mmon/model.hpp"

namespace mmon::harness {

/// Keeps large freed blocks on the heap rather than handing them back to the
/// kernel. Training allocates the same large tensors every step, and
/// refaulting fresh pages dominates small-model step times otherwise.
void retain_heap_memory();

struct Split {
    std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of 0..n-1 cut 6:2:2 (floor, floor, remainder). Throws TooFew
/// when n < 5.
Split split_dataset(std::size_t n, std::uint64_t seed);

/// Generates n instances of each configuration (master seed shared) and
/// renders them.
io::Dataset generate_dataset(std::span<const ConfigKind> configs, std::size_t n_per_config, std::uint64_t seed,
                             int size);

struct TrainConfig {
    model::Mode mode = model::Mode::Meta;
    double lambda = 0.01;
    double mu = 0.1;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch = 32;
    int epochs = 30;
    /// Stop after this many epochs without a validation improvement; 0 never stops early.
    int patience = 0;
    std::uint64_t seed = 0;
    int image_size = 40;
    model::ModelConfig model;
};

/// Throws InvalidArgument on out-of-range settings.
void validate(const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double wall_time = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct ConfigAccuracy {
    std::string configuration;
    double accuracy = 0.0;
    std::size_t count = 0;
};

struct MetricsRecord {
    std::string experiment;
    std::string mode;
    std::vector<ConfigAccuracy> per_config;
    double mean_accuracy = 0.0;  // over instances
    std::vector<double> loss_history;
    std::vector<std::uint64_t> seeds;
    double wall_time = 0.0;
};

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const nlohmann::json& j);

struct TrainResult {
    model::Params params;  // best validation accuracy (earliest on ties)
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;   // -1: the initial parameters
    double best_val_accuracy = 0.0;
};

/// Masked Adam training over shuffled batches of `train_idx`; per-epoch
/// shuffles use epoch-derived seeds. Writes one JSON line per epoch to `log`
/// when given.
TrainResult train(const TrainConfig& config, const io::Dataset& data, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, std::ostream* log = nullptr);

/// Accuracy overall and per configuration, on a non-recording tape.
MetricsRecord evaluate(const model::Params& params, const io::Dataset& data, std::span<const std::size_t> idx,
                       model::Mode mode);
MetricsRecord evaluate(const model::Params& params, const io::Dataset& data, model::Mode mode);

/// Predictions of the model for the listed instances.
std::vector<int> predictions(const model::Params& params, const io::Dataset& data, std::span<const std::size_t> idx,
                             model::Mode mode);

enum class ExperimentKind { InConfig, ConfigTransfer, RuleHoldout };

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::InConfig;
    std::vector<ConfigKind> train_configs;
    std::vector<ConfigKind> test_configs;
    std::optional<RuleFamily> held_out;
    std::size_t n_per_config = 3334;
    std::uint64_t data_seed = 1;
};

/// Throws InvalidArgument for inconsistent specs.
void validate(const ExperimentSpec& spec);

struct ExperimentResult {
    MetricsRecord metrics;  // per_config lists every evaluated (role, configuration)
    TrainResult training;
};

struct ExperimentIndices {
    std::string name;  // experiment label used in reports
    std::vector<std::size_t> train, val;
    std::vector<std::size_t> test_in;   // test split of the training configurations
    std::vector<std::size_t> test_out;  // test split of the transfer configurations
};

/// Instance selection of an experiment over a dataset holding every involved
/// configuration. Each configuration is split 6:2:2 on its own with `seed`.
ExperimentIndices experiment_indices(const ExperimentSpec& spec, const io::Dataset& data, std::uint64_t seed);

/// in_config: train and test splits of the same configurations.
/// config_transfer: trained on train_configs; reported on their test split
///   ("in:<config>") and on the test split of test_configs ("out:<config>").
/// rule_holdout: train/val splits drop instances using the held-out family,
///   the test split keeps only those (EmptyAfterFilter when a side is empty).
ExperimentResult run_generalization(const ExperimentSpec& spec, const TrainConfig& config,
                                    std::ostream* log = nullptr);

enum class ReportFormat { Csv, Json };
ReportFormat parse_report_format(std::string_view name);

/// One row per (experiment, configuration); accuracies with 4 decimals.
std::string format_report(std::span<const MetricsRecord> records, ReportFormat format);
void emit_report(std::span<const MetricsRecord> records, const std::filesystem::path& path, ReportFormat format);

}  // namespace mmon::harness
