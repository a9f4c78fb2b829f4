// Command-line front end: dataset generation, oracle runs, training,
// evaluation, gradient checks, generalization experiments and reports.
//
// Exit codes: 0 success, 1 validation error, 2 internal error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mmon/dataset_io.hpp"
#include "mmon/error.hpp"
#include "mmon/generator.hpp"
#include "mmon/gradient_suite.hpp"
#include "mmon/harness.hpp"
#include "mmon/oracle.hpp"

namespace fs = std::filesystem;
using namespace mmon;
using nlohmann::json;

namespace {

std::vector<ConfigKind> parse_config_list(const std::string& text) {
    std::vector<ConfigKind> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "all") {
            out.insert(out.end(), kAllConfigs.begin(), kAllConfigs.end());
        } else if (!item.empty()) {
            out.push_back(parse_config(item));
        }
    }
    if (out.empty()) throw InvalidArgument("no configuration given");
    return out;
}

struct TrainOptions {
    std::string mode = "meta";
    double lambda = 0.01;
    double mu = 0.1;
    double lr = 1e-3;
    int batch = 32;
    int epochs = 30;
    int patience = 0;
    std::uint64_t seed = 0;

    void add_to(CLI::App* app) {
        app->add_option("--mode", mode, "plain or meta")->check(CLI::IsMember({"plain", "meta"}));
        app->add_option("--lambda", lambda, "margin term weight");
        app->add_option("--mu", mu, "rule-alignment weight (meta mode)");
        app->add_option("--lr", lr, "Adam learning rate");
        app->add_option("--batch", batch, "batch size");
        app->add_option("--epochs", epochs, "maximum epochs");
        app->add_option("--patience", patience, "early stop after this many epochs without improvement (0: off)");
        app->add_option("--seed", seed, "training seed (split, init, shuffles)");
    }

    harness::TrainConfig config(int size) const {
        harness::TrainConfig c;
        c.mode = model::parse_mode(mode);
        c.lambda = lambda;
        c.mu = mu;
        c.lr = lr;
        c.batch = batch;
        c.epochs = epochs;
        c.patience = patience;
        c.seed = seed;
        c.image_size = size;
        return c;
    }
};

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

json training_summary(const harness::TrainResult& r) {
    return {{"best_epoch", r.best_epoch}, {"best_val_accuracy", r.best_val_accuracy}, {"epochs_run", r.epochs.size()}};
}

int cmd_gen(const std::string& config, std::size_t n, std::uint64_t seed, int size, const fs::path& out) {
    if (n == 0) throw InvalidArgument("--n must be positive");
    const auto configs = parse_config_list(config);
    const io::Dataset data = harness::generate_dataset(configs, n, seed, size);
    io::serialize_dataset(data, out);
    std::cout << json{{"instances", data.count()}, {"size", size}, {"out", out.string()}}.dump() << '\n';
    return 0;
}

int cmd_oracle(const fs::path& dir) {
    const io::Dataset data = io::deserialize_dataset(dir);
    std::size_t correct = 0;
    json tie_seeds = json::array();
    for (const auto& inst : data.instances) {
        try {
            if (oracle::solve(inst) == inst.label) ++correct;
        } catch (const AmbiguousTie&) {
            tie_seeds.push_back(inst.seed);
        }
    }
    const double acc = data.count() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.count());
    std::cout << json{{"instances", data.count()}, {"correct", correct}, {"accuracy", acc}, {"ambiguous_tie_seeds", tie_seeds}}.dump()
              << '\n';
    return 0;
}

int cmd_train(const fs::path& data_dir, const TrainOptions& opts, const fs::path& out) {
    const io::Dataset data = io::deserialize_dataset(data_dir);
    harness::TrainConfig config = opts.config(data.size);
    const harness::Split split = harness::split_dataset(data.count(), config.seed);
    ensure_dir(out);
    std::ofstream log(out / "log.jsonl");
    if (!log) throw IoError("cannot write " + (out / "log.jsonl").string());
    const harness::TrainResult result = harness::train(config, data, split.train, split.val, &log);
    model::save_params(out / "model.mmn", result.params);

    harness::MetricsRecord m = harness::evaluate(result.params, data, split.test, config.mode);
    m.experiment = "in_config";
    m.seeds = {config.seed};
    for (const auto& e : result.epochs) m.loss_history.push_back(e.loss);
    m.wall_time = result.epochs.empty() ? 0.0 : result.epochs.back().wall_time;
    write_json(out / "metrics.json", harness::to_json(m));
    json summary = training_summary(result);
    summary["test_accuracy"] = m.mean_accuracy;
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_eval(const fs::path& model_file, const fs::path& data_dir, const std::string& mode) {
    const model::Params params = model::load_params(model_file);
    const io::Dataset data = io::deserialize_dataset(data_dir);
    harness::MetricsRecord m = harness::evaluate(params, data, model::parse_mode(mode));
    m.experiment = "eval";
    std::cout << harness::to_json(m).dump() << '\n';
    return 0;
}

int cmd_gradcheck(int trials, std::uint64_t seed) {
    bool ok = true;
    json rows = json::array();
    for (const auto& e : harness::gradient_suite(trials, seed)) {
        rows.push_back({{"check", e.name},
                        {"max_rel_error", e.max_rel_error},
                        {"tolerance", e.tolerance},
                        {"probes", e.probes},
                        {"skipped", e.skipped},
                        {"passed", e.passed()}});
        ok = ok && e.passed();
    }
    std::cout << rows.dump(1) << '\n';
    return ok ? 0 : 2;
}

struct ExperimentOptions {
    std::size_t n = 3334;
    std::uint64_t data_seed = 1;
    int size = 40;

    void add_to(CLI::App* app) {
        app->add_option("--n", n, "instances generated per configuration");
        app->add_option("--data-seed", data_seed, "dataset master seed");
        app->add_option("--size", size, "image size (40 or 80)");
    }
};

int run_experiment(harness::ExperimentSpec spec, const ExperimentOptions& eo, const TrainOptions& opts,
                   const fs::path& out) {
    spec.n_per_config = eo.n;
    spec.data_seed = eo.data_seed;
    const harness::TrainConfig config = opts.config(eo.size);
    harness::validate(spec);
    ensure_dir(out);
    std::ofstream log(out / "log.jsonl");
    if (!log) throw IoError("cannot write " + (out / "log.jsonl").string());
    const harness::ExperimentResult r = harness::run_generalization(spec, config, &log);
    model::save_params(out / "model.mmn", r.training.params);
    write_json(out / "metrics.json", harness::to_json(r.metrics));
    std::cout << harness::to_json(r.metrics).dump() << '\n';
    return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& format, const fs::path& out) {
    std::vector<harness::MetricsRecord> records;
    for (const auto& dir : runs) {
        const fs::path file = fs::path(dir) / "metrics.json";
        std::ifstream in(file);
        if (!in) throw IoError("cannot open " + file.string());
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw FormatError("cannot parse " + file.string() + ": " + e.what());
        }
        records.push_back(harness::metrics_from_json(j));
    }
    harness::emit_report(records, out, harness::parse_report_format(format));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    mmon::harness::retain_heap_memory();
    CLI::App app{"Multi-granularity modularized reasoning on procedurally generated matrix puzzles"};
    app.require_subcommand(1);

    std::string config = "center";
    std::size_t n = 0;
    std::uint64_t seed = 0;
    int size = 40;
    std::string out;
    auto* gen = app.add_subcommand("gen", "generate and render a dataset");
    gen->add_option("--config", config, "configuration name, comma list or 'all'")->required();
    gen->add_option("--n", n, "instances per configuration")->required();
    gen->add_option("--seed", seed, "master seed")->required();
    gen->add_option("--size", size, "image size (40 or 80)");
    gen->add_option("--out", out, "output directory")->required();

    std::string data;
    auto* orc = app.add_subcommand("oracle", "solve a dataset with the symbolic oracle");
    orc->add_option("--data", data, "dataset directory")->required();

    TrainOptions train_opts;
    auto* trn = app.add_subcommand("train", "train on the 6:2:2 split of a dataset");
    trn->add_option("--data", data, "dataset directory")->required();
    train_opts.add_to(trn);
    trn->add_option("--out", out, "output directory")->required();

    std::string model_file;
    std::string eval_mode = "meta";
    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    evl->add_option("--model", model_file, "checkpoint file")->required();
    evl->add_option("--data", data, "dataset directory")->required();
    evl->add_option("--mode", eval_mode, "plain or meta")->check(CLI::IsMember({"plain", "meta"}));

    int trials = 20;
    std::uint64_t grad_seed = 0;
    auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    grd->add_option("--trials", trials, "random trials per check");
    grd->add_option("--seed", grad_seed, "seed");

    std::string train_cfgs;
    std::string test_cfgs;
    ExperimentOptions exp_opts;
    auto* xfr = app.add_subcommand("xfer", "train on some configurations, test on others");
    xfr->add_option("--train", train_cfgs, "training configurations")->required();
    xfr->add_option("--test", test_cfgs, "test configurations")->required();
    exp_opts.add_to(xfr);
    train_opts.add_to(xfr);
    xfr->add_option("--out", out, "output directory")->required();

    std::string rule;
    std::string holdout_cfgs = "center";
    auto* hld = app.add_subcommand("holdout", "train without one rule family, test on instances using it");
    hld->add_option("--rule", rule, "held-out rule family")
        ->required()
        ->check(CLI::IsMember({"constant", "progression", "arithmetic", "distribute_three"}));
    hld->add_option("--configs", holdout_cfgs, "configurations");
    exp_opts.add_to(hld);
    train_opts.add_to(hld);
    hld->add_option("--out", out, "output directory")->required();

    std::vector<std::string> runs;
    std::string format = "csv";
    auto* rep = app.add_subcommand("report", "collect metrics.json files into one report");
    rep->add_option("--runs", runs, "run directories")->required();
    rep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    rep->add_option("--out", out, "output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(config, n, seed, size, out);
        if (orc->parsed()) return cmd_oracle(data);
        if (trn->parsed()) return cmd_train(data, train_opts, out);
        if (evl->parsed()) return cmd_eval(model_file, data, eval_mode);
        if (grd->parsed()) return cmd_gradcheck(trials, grad_seed);
        if (xfr->parsed()) {
            harness::ExperimentSpec spec;
            spec.kind = harness::ExperimentKind::ConfigTransfer;
            spec.train_configs = parse_config_list(train_cfgs);
            spec.test_configs = parse_config_list(test_cfgs);
            return run_experiment(spec, exp_opts, train_opts, out);
        }
        if (hld->parsed()) {
            harness::ExperimentSpec spec;
            spec.kind = harness::ExperimentKind::RuleHoldout;
            spec.train_configs = parse_config_list(holdout_cfgs);
            spec.held_out = parse_rule_family(rule);
            return run_experiment(spec, exp_opts, train_opts, out);
        }
        if (rep->parsed()) return cmd_report(runs, format, out);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
