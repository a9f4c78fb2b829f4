#include "mmon/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mmon/error.hpp"
#include "mmon/generator.hpp"
#include "mmon/rng.hpp"

namespace mmon::harness {

void retain_heap_memory() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}


using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x53504c54;
constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kEpochStream = 0x45504f43;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

std::string fixed4(double x) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << x;
    return os.str();
}

model::Example example(const io::Dataset& data, std::size_t i) {
    const PuzzleInstance& inst = data.instances[i];
    return {data.rasters_of(i), inst.config, &inst.annotation, inst.meta, inst.label};
}

// Instances whose annotation uses (want = true) or avoids the family.
std::vector<std::size_t> by_family(std::span<const std::size_t> idx, const io::Dataset& data, RuleFamily f,
                                   bool want) {
    std::vector<std::size_t> out;
    for (std::size_t i : idx) {
        if (data.instances[i].annotation.contains_family(f) == want) out.push_back(i);
    }
    return out;
}

}  // namespace

Split split_dataset(std::size_t n, std::uint64_t seed) {
    if (n < 5) throw TooFew("need at least 5 instances to split, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, kSplitStream));
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

io::Dataset generate_dataset(std::span<const ConfigKind> configs, std::size_t n_per_config, std::uint64_t seed,
                             int size) {
    if (!render::supported_size(size)) throw UnsupportedSize("image size must be 40 or 80");
    std::vector<PuzzleInstance> all;
    for (ConfigKind c : configs) {
        auto part = generate_corpus(c, n_per_config, seed);
        std::move(part.begin(), part.end(), std::back_inserter(all));
    }
    return io::make_dataset(std::move(all), size);
}

void validate(const TrainConfig& c) {
    if (!(c.lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (!(c.mu >= 0.0)) throw InvalidArgument("mu must be >= 0");
    if (!(c.lr > 0.0)) throw InvalidArgument("learning rate must be > 0");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0)) {
        throw InvalidArgument("Adam betas must lie in [0, 1)");
    }
    if (c.batch < 1) throw InvalidArgument("batch size must be >= 1");
    if (c.epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (c.patience < 0) throw InvalidArgument("patience must be >= 0");
    if (!render::supported_size(c.image_size)) throw UnsupportedSize("image size must be 40 or 80");
}

json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"loss", r.loss},
            {"train_accuracy", r.train_accuracy},
            {"val_accuracy", r.val_accuracy},
            {"wall_time", r.wall_time}};
}

json to_json(const MetricsRecord& r) {
    json per = json::array();
    for (const auto& c : r.per_config) {
        per.push_back({{"configuration", c.configuration}, {"accuracy", round4(c.accuracy)}, {"count", c.count}});
    }
    return {{"experiment", r.experiment},
            {"mode", r.mode},
            {"per_config", std::move(per)},
            {"mean_accuracy", round4(r.mean_accuracy)},
            {"loss_history", r.loss_history},
            {"seeds", r.seeds},
            {"wall_time", r.wall_time}};
}

MetricsRecord metrics_from_json(const json& j) {
    try {
        MetricsRecord r;
        r.experiment = j.at("experiment").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        for (const auto& c : j.at("per_config")) {
            r.per_config.push_back({c.at("configuration").get<std::string>(), c.at("accuracy").get<double>(),
                                    c.at("count").get<std::size_t>()});
        }
        r.mean_accuracy = j.at("mean_accuracy").get<double>();
        r.loss_history = j.at("loss_history").get<std::vector<double>>();
        r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        r.wall_time = j.at("wall_time").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad metrics record: ") + e.what());
    }
}

std::vector<int> predictions(const model::Params& params, const io::Dataset& data, std::span<const std::size_t> idx,
                             model::Mode mode) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        if (i >= data.count()) throw BadIndex("instance " + std::to_string(i));
        const PuzzleInstance& inst = data.instances[i];
        ag::Tape quiet(false);
        const auto sv = model::score_candidates(quiet, model::panels_tensor(data.rasters_of(i)), inst.config, params,
                                                mode, &inst.annotation);
        out.push_back(model::predict(sv.s.values()));
    }
    return out;
}

MetricsRecord evaluate(const model::Params& params, const io::Dataset& data, std::span<const std::size_t> idx,
                       model::Mode mode) {
    if (idx.empty()) throw InvalidArgument("cannot evaluate on an empty dataset");
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<int> pred = predictions(params, data, idx, mode);
    std::map<ConfigKind, std::pair<std::size_t, std::size_t>> tally;  // correct, total
    std::size_t correct = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const PuzzleInstance& inst = data.instances[idx[k]];
        const bool ok = pred[k] == inst.label;
        correct += ok ? 1 : 0;
        auto& [c, n] = tally[inst.config];
        c += ok ? 1 : 0;
        ++n;
    }
    MetricsRecord r;
    r.mode = std::string(model::mode_name(mode));
    for (const auto& [config, cn] : tally) {
        r.per_config.push_back({std::string(config_name(config)),
                                static_cast<double>(cn.first) / static_cast<double>(cn.second), cn.second});
    }
    r.mean_accuracy = static_cast<double>(correct) / static_cast<double>(idx.size());
    r.wall_time = seconds_since(t0);
    return r;
}

MetricsRecord evaluate(const model::Params& params, const io::Dataset& data, model::Mode mode) {
    std::vector<std::size_t> all(data.count());
    std::iota(all.begin(), all.end(), 0);
    return evaluate(params, data, all, mode);
}

TrainResult train(const TrainConfig& config, const io::Dataset& data, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, std::ostream* log) {
    validate(config);
    if (train_idx.empty()) throw InvalidArgument("empty training set");
    if (val_idx.empty()) throw InvalidArgument("empty validation set");
    const auto t0 = std::chrono::steady_clock::now();

    model::Params params(config.model, derive_seed(config.seed, kInitStream));
    ag::AdamState state(params.tensors(), {config.lr, config.beta1, config.beta2, 1e-8});
    const model::TrainSettings settings{config.mode, config.lambda, config.mu};

    TrainResult result{params.clone(), {}, -1, evaluate(params, data, val_idx, config.mode).mean_accuracy};
    int since_best = 0;
    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
    std::vector<model::Example> batch;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::copy(train_idx.begin(), train_idx.end(), order.begin());
        Rng rng(derive_seed(config.seed, kEpochStream + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        double correct = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(example(data, order[k]));
            const auto step = model::masked_train_step(batch, params, state, settings);
            const auto n = static_cast<double>(batch.size());
            loss_sum += step.loss * n;
            correct += step.accuracy * n;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = correct / static_cast<double>(order.size());
        rec.val_accuracy = evaluate(params, data, val_idx, config.mode).mean_accuracy;
        rec.wall_time = seconds_since(t0);
        result.epochs.push_back(rec);
        if (log != nullptr) *log << to_json(rec).dump() << '\n' << std::flush;

        if (rec.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = rec.val_accuracy;
            result.best_epoch = epoch;
            result.params = params.clone();
            since_best = 0;
        } else if (config.patience > 0 && ++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

void validate(const ExperimentSpec& spec) {
    if (spec.train_configs.empty()) throw InvalidArgument("no training configurations");
    switch (spec.kind) {
        case ExperimentKind::InConfig: break;
        case ExperimentKind::ConfigTransfer:
            if (spec.test_configs.empty()) throw InvalidArgument("no test configurations");
            for (ConfigKind c : spec.test_configs) {
                if (std::find(spec.train_configs.begin(), spec.train_configs.end(), c) != spec.train_configs.end()) {
                    throw InvalidArgument("transfer needs disjoint train and test configurations; both contain " +
                                          std::string(config_name(c)));
                }
            }
            break;
        case ExperimentKind::RuleHoldout:
            if (!spec.held_out) throw InvalidArgument("rule holdout needs a rule family");
            break;
    }
    if (spec.n_per_config < 5) throw TooFew("need at least 5 instances per configuration");
}

namespace {

// Every configuration is split on its own so each keeps exact 6:2:2 proportions.
Split split_of_configs(const io::Dataset& data, std::span<const ConfigKind> configs, std::uint64_t seed) {
    Split out;
    for (ConfigKind c : configs) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < data.count(); ++i) {
            if (data.instances[i].config == c) members.push_back(i);
        }
        if (members.empty()) continue;
        const Split s = split_dataset(members.size(), seed);
        for (std::size_t j : s.train) out.train.push_back(members[j]);
        for (std::size_t j : s.val) out.val.push_back(members[j]);
        for (std::size_t j : s.test) out.test.push_back(members[j]);
    }
    return out;
}

}  // namespace

ExperimentIndices experiment_indices(const ExperimentSpec& spec, const io::Dataset& data, std::uint64_t seed) {
    const Split split = split_of_configs(data, spec.train_configs, seed);
    ExperimentIndices ix;
    ix.train = split.train;
    ix.val = split.val;
    ix.test_in = split.test;
    switch (spec.kind) {
        case ExperimentKind::InConfig: ix.name = "in_config"; break;
        case ExperimentKind::ConfigTransfer:
            ix.name = "config_transfer";
            ix.test_out = split_of_configs(data, spec.test_configs, seed).test;
            break;
        case ExperimentKind::RuleHoldout: {
            if (!spec.held_out) throw InvalidArgument("rule holdout needs a rule family");
            const RuleFamily f = *spec.held_out;
            ix.name = "rule_holdout_" + std::string(rule_family_name(f));
            ix.train = by_family(ix.train, data, f, false);
            ix.val = by_family(ix.val, data, f, false);
            ix.test_in = by_family(ix.test_in, data, f, true);
            if (ix.train.empty() || ix.val.empty()) {
                throw EmptyAfterFilter("no training instances left without " + std::string(rule_family_name(f)));
            }
            if (ix.test_in.empty()) throw EmptyAfterFilter("no test instances use " + std::string(rule_family_name(f)));
            break;
        }
    }
    return ix;
}

ExperimentResult run_generalization(const ExperimentSpec& spec, const TrainConfig& config, std::ostream* log) {
    validate(spec);
    validate(config);
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<ConfigKind> configs = spec.train_configs;
    if (spec.kind == ExperimentKind::ConfigTransfer) {
        configs.insert(configs.end(), spec.test_configs.begin(), spec.test_configs.end());
    }
    const io::Dataset data = generate_dataset(configs, spec.n_per_config, spec.data_seed, config.image_size);
    const ExperimentIndices ix = experiment_indices(spec, data, config.seed);

    ExperimentResult out{MetricsRecord{}, train(config, data, ix.train, ix.val, log)};
    MetricsRecord& m = out.metrics;
    m.experiment = ix.name;
    m.mode = std::string(model::mode_name(config.mode));
    m.seeds = {spec.data_seed, config.seed};
    for (const auto& e : out.training.epochs) m.loss_history.push_back(e.loss);

    const MetricsRecord in = evaluate(out.training.params, data, ix.test_in, config.mode);
    const std::string in_prefix = spec.kind == ExperimentKind::ConfigTransfer ? "in:" : "";
    for (auto c : in.per_config) {
        c.configuration = in_prefix + c.configuration;
        m.per_config.push_back(c);
    }
    m.mean_accuracy = in.mean_accuracy;
    if (!ix.test_out.empty()) {
        const MetricsRecord outside = evaluate(out.training.params, data, ix.test_out, config.mode);
        for (auto c : outside.per_config) {
            c.configuration = "out:" + c.configuration;
            m.per_config.push_back(c);
        }
        m.mean_accuracy = outside.mean_accuracy;
    }
    m.wall_time = seconds_since(t0);
    return out;
}

ReportFormat parse_report_format(std::string_view name) {
    if (name == "csv") return ReportFormat::Csv;
    if (name == "json") return ReportFormat::Json;
    throw InvalidArgument("unknown report format '" + std::string(name) + "' (expected csv or json)");
}

std::string format_report(std::span<const MetricsRecord> records, ReportFormat format) {
    if (format == ReportFormat::Json) {
        json all = json::array();
        for (const auto& r : records) all.push_back(to_json(r));
        return all.dump(2) + "\n";
    }
    std::string out = "experiment,mode,configuration,accuracy,count,mean_accuracy,wall_time\n";
    for (const auto& r : records) {
        for (const auto& c : r.per_config) {
            out += r.experiment + "," + r.mode + "," + c.configuration + "," + fixed4(c.accuracy) + "," +
                   std::to_string(c.count) + "," + fixed4(r.mean_accuracy) + "," + fixed4(r.wall_time) + "\n";
        }
    }
    return out;
}

void emit_report(std::span<const MetricsRecord> records, const std::filesystem::path& path, ReportFormat format) {
    const std::string text = format_report(records, format);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace mmon::harness
