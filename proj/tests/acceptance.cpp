// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Training runs are cached under --work-dir.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "mmon/dataset_io.hpp"
#include "mmon/error.hpp"
#include "mmon/generator.hpp"
#include "mmon/gradient_suite.hpp"
#include "mmon/harness.hpp"
#include "mmon/oracle.hpp"
#include "mmon/rules.hpp"

using namespace mmon;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

constexpr int kSeeds = 3;
constexpr std::size_t kPerConfig = 3334;  // 2000 / 666 / 668 under the 6:2:2 split
constexpr std::uint64_t kDataSeed = 1;
constexpr double kMu = 1.0;  // rule-alignment weight for the learning runs
constexpr double kRunBudget = 30 * 60.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

std::array<Triple, 3> rows_of(const PuzzleInstance& inst, const RuleSpec& r, int candidate) {
    std::array<Triple, 3> out{};
    for (int row = 0; row < 3; ++row) {
        const auto panels = inst.row(row, candidate);
        for (std::size_t i = 0; i < 3; ++i) {
            out[static_cast<std::size_t>(row)][i] =
                attribute_value(panels[i]->components[static_cast<std::size_t>(r.component_slot)], r.attribute);
        }
    }
    return out;
}

bool consistent(const PuzzleInstance& inst, int candidate) {
    const Configuration& cfg = configuration(inst.config);
    for (const RuleSpec& r : inst.annotation.rules) {
        const int capacity = cfg.components[static_cast<std::size_t>(r.component_slot)].capacity();
        if (!rule_holds(r, rows_of(inst, r, candidate), capacity)) return false;
    }
    return true;
}

std::vector<PuzzleInstance> corpus() {
    std::vector<PuzzleInstance> out;
    out.reserve(7000);
    for (ConfigKind c : kAllConfigs) {
        for (std::uint64_t seed = 0; seed < 1000; ++seed) out.push_back(generate_puzzle(c, seed));
    }
    return out;
}

Outcome oracle_exactness(const std::vector<PuzzleInstance>& instances) {
    std::size_t correct = 0, ties = 0;
    const double c0 = cpu_seconds();
    for (const PuzzleInstance& inst : instances) {
        try {
            correct += oracle::solve(inst) == inst.label;
        } catch (const AmbiguousTie&) {
            ++ties;
        }
    }
    const double cpu = cpu_seconds() - c0;
    return {correct == instances.size() && ties == 0 && cpu < 120.0,
            std::to_string(correct) + "/" + std::to_string(instances.size()) + " solved, " + std::to_string(ties) +
                " ties, " + fmt(cpu, 2) + " s CPU"};
}

Outcome generator_soundness(const std::vector<PuzzleInstance>& instances) {
    std::size_t rule_failures = 0, uniqueness_failures = 0;
    for (const PuzzleInstance& inst : instances) {
        if (!consistent(inst, inst.label)) ++rule_failures;
        int count = 0;
        for (int k = 0; k < 8; ++k) count += consistent(inst, k);
        if (count != 1) ++uniqueness_failures;
    }
    return {rule_failures == 0 && uniqueness_failures == 0,
            std::to_string(instances.size()) + " instances, " + std::to_string(rule_failures) +
                " with a broken annotated rule, " + std::to_string(uniqueness_failures) +
                " without exactly one consistent candidate"};
}

Outcome gradient_checks() {
    const auto t0 = clk::now();
    const auto entries = harness::gradient_suite(20, 1);
    const double secs = seconds_since(t0);
    double worst_op = 0, worst_e2e = 0;
    std::size_t failed = 0;
    for (const auto& e : entries) {
        failed += !e.passed();
        double& worst = e.tolerance < 5e-4 ? worst_op : worst_e2e;  // ops use 1e-4, the model 1e-3
        worst = std::max(worst, e.max_rel_error);
    }
    return {failed == 0 && secs < 60.0,
            std::to_string(entries.size()) + " checks, " + std::to_string(failed) + " failed, max rel error ops " +
                fmt(worst_op * 1e6, 3) + "e-6, end-to-end " + fmt(worst_e2e * 1e6, 3) + "e-6, " + fmt(secs, 1) + " s"};
}

struct Batch {
    std::vector<PuzzleInstance> instances;
    std::vector<std::vector<render::Raster>> rasters;

    std::vector<model::Example> examples() const {
        std::vector<model::Example> out;
        for (std::size_t i = 0; i < instances.size(); ++i) {
            const PuzzleInstance& inst = instances[i];
            out.push_back({rasters[i], inst.config, &inst.annotation, inst.meta, inst.label});
        }
        return out;
    }
};

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// A step where attribute a is annotated for both slots, then the same batch
// with every a rule removed. Adam moments are nonzero after the first step,
// so an unmasked module would still move on the second.
Outcome masking_invariant() {
    std::size_t checked = 0, moved = 0, primed = 0, unfrozen = 0;
    for (Attribute a : kAllAttributes) {
        Batch batch;
        for (int slot = 0; slot < 2; ++slot) {
            int found = 0;
            for (std::uint64_t seed = 0; found < 2 && seed < 10000; ++seed) {
                const ConfigKind c = kAllConfigs[seed % kAllConfigs.size()];
                const PuzzleInstance inst = generate_puzzle(c, seed);
                if (inst.annotation.find(slot, a) == nullptr) continue;
                batch.instances.push_back(inst);
                batch.rasters.push_back(render::render_instance(inst, 40));
                ++found;
            }
        }
        model::Params p(model::ModelConfig{}, 11);
        ag::AdamState state(p.tensors(), ag::AdamConfig{});
        const model::Params before = p.clone();
        model::masked_train_step(batch.examples(), p, state, model::TrainSettings{});

        Batch stripped = batch;
        for (PuzzleInstance& inst : stripped.instances) {
            std::erase_if(inst.annotation.rules, [a](const RuleSpec& r) { return r.attribute == a; });
            inst.meta = encode_meta_target(inst.annotation);
        }
        const model::Params mid = p.clone();
        const model::StepResult r = model::masked_train_step(stripped.examples(), p, state, model::TrainSettings{});

        const auto owner = p.module_of();
        const auto t0 = before.tensors(), t1 = mid.tensors(), t2 = p.tensors();
        for (std::size_t i = 0; i < t2.size(); ++i) {
            const int m = owner[i];
            const bool target = m == model::module_index(0, a) || m == model::module_index(1, a);
            if (!target) continue;
            ++checked;
            primed += !bit_equal(t0[i].values(), t1[i].values());
            moved += !bit_equal(t1[i].values(), t2[i].values());
            unfrozen += !r.frozen[static_cast<std::size_t>(m)];
        }
    }
    return {moved == 0 && unfrozen == 0 && primed == checked,
            std::to_string(checked) + " module tensors over 5 attributes, " + std::to_string(primed) +
                " updated by the priming step, " + std::to_string(moved) + " changed by the masked step"};
}

Outcome equivariance() {
    const model::Params p(model::ModelConfig{}, 5);
    Rng rng(77);
    std::size_t checks = 0, failures = 0, tied = 0;
    for (int i = 0; i < 100; ++i) {
        const ConfigKind c = kAllConfigs[static_cast<std::size_t>(i) % kAllConfigs.size()];
        const PuzzleInstance inst = generate_puzzle(c, 5000 + static_cast<std::uint64_t>(i));
        const auto rasters = render::render_instance(inst, 40);
        for (model::Mode mode : {model::Mode::Meta, model::Mode::Plain}) {
            ag::Tape quiet(false);
            const ag::Tensor s =
                model::score_candidates(quiet, model::panels_tensor(rasters), c, p, mode, &inst.annotation).s;
            const std::vector<double> base(s.values().begin(), s.values().end());
            const double top = *std::max_element(base.begin(), base.end());
            tied += std::count(base.begin(), base.end(), top) > 1;
            for (int trial = 0; trial < 10; ++trial) {
                std::array<int, 8> perm{};
                std::iota(perm.begin(), perm.end(), 0);
                rng.shuffle(std::span<int>(perm));
                // Slot j of the permuted puzzle shows original candidate perm[j].
                auto moved = rasters;
                for (std::size_t j = 0; j < 8; ++j) moved[8 + j] = rasters[8 + static_cast<std::size_t>(perm[j])];
                const ag::Tensor t2 =
                    model::score_candidates(quiet, model::panels_tensor(moved), c, p, mode, &inst.annotation).s;
                const auto s2 = t2.values();
                bool ok = true;
                for (std::size_t j = 0; j < 8; ++j) ok = ok && s2[j] == base[static_cast<std::size_t>(perm[j])];
                // With an exact tie the lowest index wins, so only the argmax set maps.
                ok = ok && base[static_cast<std::size_t>(perm[static_cast<std::size_t>(model::predict(s2))])] ==
                               base[static_cast<std::size_t>(model::predict(base))];
                ++checks;
                failures += !ok;
            }
        }
    }
    return {failures == 0, std::to_string(checks) + " permuted scorings (100 instances x 10 permutations x 2 modes), " +
                               std::to_string(failures) + " mismatches, " + std::to_string(tied) +
                               " scorings with a tied maximum"};
}

Outcome loss_identities() {
    Rng rng(3);
    double worst_lambda0 = 0, worst_uniform = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(8);
        for (double& x : v) x = rng.uniform_real(-5, 5);
        const int y = rng.uniform_int(0, 7);
        ag::Tape t(false);
        const ag::Tensor s({8}, v);
        const double l = model::loss(t, s, y, 0.0).item();
        const double ce = ag::softmax_cross_entropy(t, s, y).item();
        worst_lambda0 = std::max(worst_lambda0, std::abs(l - ce));
        const double c = rng.uniform_real(-50, 50);
        const ag::Tensor u({8}, std::vector<double>(8, c));
        worst_uniform = std::max(worst_uniform, std::abs(model::loss(t, u, y, 0.0).item() - std::log(8.0)));
    }
    return {worst_lambda0 <= 1e-12 && worst_uniform <= 1e-9,
            "max |loss - CE| at lambda 0: " + fmt(worst_lambda0 * 1e12, 3) + "e-12, max |CE - ln 8| on uniform scores: " +
                fmt(worst_uniform * 1e9, 3) + "e-9"};
}

Outcome serialization(const fs::path& work) {
    std::vector<PuzzleInstance> instances;
    for (ConfigKind c : kAllConfigs) {
        for (std::uint64_t s = 0; s < 3; ++s) instances.push_back(generate_puzzle(c, 900 + s));
    }
    const io::Dataset d = io::make_dataset(std::move(instances), 40);
    const fs::path a = work / "serial_a", b = work / "serial_b";
    fs::remove_all(a);
    fs::remove_all(b);
    io::serialize_dataset(d, a);
    const io::Dataset back = io::deserialize_dataset(a);
    io::serialize_dataset(back, b);
    bool ok = back.instances == d.instances && back.rasters == d.rasters;
    for (const char* f : {"panels.bin", "manifest.json"}) ok = ok && ag::read_file_bytes(a / f) == ag::read_file_bytes(b / f);

    const model::Params p(model::ModelConfig{}, 9);
    model::save_params(work / "params.mmn", p);
    const model::Params q = model::load_params(work / "params.mmn");
    ok = ok && ag::encode_checkpoint(p.named()) == ag::encode_checkpoint(q.named());
    model::save_params(work / "params2.mmn", q);
    ok = ok && ag::read_file_bytes(work / "params.mmn") == ag::read_file_bytes(work / "params2.mmn");

    int raised = 0;
    std::string bytes = ag::read_file_bytes(work / "params.mmn");
    bytes[0] = 'X';
    try {
        ag::decode_checkpoint(bytes);
    } catch (const FormatError&) {
        ++raised;
    }
    std::string panels = ag::read_file_bytes(a / "panels.bin");
    panels[1] = 'Q';
    std::ofstream(a / "panels.bin", std::ios::binary | std::ios::trunc) << panels;
    try {
        io::deserialize_dataset(a);
    } catch (const FormatError&) {
        ++raised;
    }
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove(work / "params.mmn");
    fs::remove(work / "params2.mmn");
    return {ok && raised == 2, std::string(ok ? "round trips bit-exact" : "round trip mismatch") + ", corrupted magic raised FormatError " +
                                   std::to_string(raised) + "/2"};
}

// ---- learning criteria ----

struct RunResult {
    double test_accuracy = 0;      // Center test split
    double transfer_accuracy = 0;  // LeftRight test split (meta runs)
    double seconds = 0;            // training plus evaluation
    int epochs = 0;
};

nlohmann::json run_key(const harness::TrainConfig& c, const std::string& what) {
    return {{"what", what},       {"mode", model::mode_name(c.mode)}, {"lambda", c.lambda}, {"mu", c.mu},
            {"lr", c.lr},         {"batch", c.batch},                 {"epochs", c.epochs}, {"seed", c.seed},
            {"size", c.image_size}, {"n", kPerConfig},                {"data_seed", kDataSeed}};
}

class Runs {
public:
    Runs(fs::path work) : work_(std::move(work)) {}

    const io::Dataset& data() {
        if (!data_) {
            const std::array<ConfigKind, 2> cfgs = {ConfigKind::Center, ConfigKind::LeftRight};
            data_ = harness::generate_dataset(cfgs, kPerConfig, kDataSeed, 40);
        }
        return *data_;
    }

    RunResult get(model::Mode mode, std::uint64_t seed, bool holdout) {
        harness::TrainConfig c;
        c.mode = mode;
        c.seed = seed;
        c.epochs = 30;
        c.mu = kMu;
        const std::string name = holdout ? "holdout_d3_s" + std::to_string(seed)
                                         : std::string(model::mode_name(mode)) + "_s" + std::to_string(seed);
        const nlohmann::json key = run_key(c, holdout ? "holdout_distribute_three" : "center");
        const fs::path dir = work_ / name;
        if (fs::exists(dir / "result.json")) {
            std::ifstream in(dir / "result.json");
            const nlohmann::json j = nlohmann::json::parse(in);
            if (j.at("key") == key) {
                std::cerr << "cached " << name << "\n";
                return {j.at("test_accuracy"), j.at("transfer_accuracy"), j.at("seconds"), j.at("epochs")};
            }
        }
        fs::create_directories(dir);
        harness::ExperimentSpec spec;
        spec.kind = holdout ? harness::ExperimentKind::RuleHoldout : harness::ExperimentKind::ConfigTransfer;
        spec.train_configs = {ConfigKind::Center};
        if (holdout) {
            spec.held_out = RuleFamily::DistributeThree;
        } else {
            spec.test_configs = {ConfigKind::LeftRight};
        }
        const io::Dataset& d = data();
        const auto ix = harness::experiment_indices(spec, d, derive_seed(seed, 0x53504c54));
        std::cerr << "training " << name << " on " << ix.train.size() << " instances\n";
        const auto t0 = clk::now();
        std::ofstream log(dir / "log.jsonl");
        const harness::TrainResult tr = harness::train(c, d, ix.train, ix.val, &log);
        RunResult r;
        r.test_accuracy = harness::evaluate(tr.params, d, ix.test_in, mode).mean_accuracy;
        if (!ix.test_out.empty()) r.transfer_accuracy = harness::evaluate(tr.params, d, ix.test_out, mode).mean_accuracy;
        r.seconds = seconds_since(t0);
        r.epochs = static_cast<int>(tr.epochs.size());
        model::save_params(dir / "model.mmn", tr.params);
        std::ofstream(dir / "result.json") << nlohmann::json{{"key", key},
                                                             {"train", ix.train.size()},
                                                             {"test", ix.test_in.size()},
                                                             {"test_accuracy", r.test_accuracy},
                                                             {"transfer_accuracy", r.transfer_accuracy},
                                                             {"seconds", r.seconds},
                                                             {"epochs", r.epochs},
                                                             {"best_epoch", tr.best_epoch}}
                                                  .dump(1)
                                           << "\n";
        std::cerr << name << ": test " << fmt(r.test_accuracy) << " transfer " << fmt(r.transfer_accuracy) << " in "
                  << fmt(r.seconds, 0) << " s\n";
        return r;
    }

private:
    fs::path work_;
    std::optional<io::Dataset> data_;
};

std::string list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
    return s;
}

Outcome desk_learning(const std::vector<RunResult>& meta) {
    int above = 0;
    bool in_budget = true;
    std::vector<double> acc;
    double slowest = 0;
    for (const RunResult& r : meta) {
        above += r.test_accuracy >= 0.60;
        in_budget = in_budget && r.seconds <= kRunBudget && r.epochs <= 30;
        acc.push_back(r.test_accuracy);
        slowest = std::max(slowest, r.seconds);
    }
    return {above * 2 > kSeeds && in_budget, "meta Center test accuracy per seed " + list(acc) + " (need >= 0.6000 in 2 of 3), slowest run " +
                                                 fmt(slowest / 60, 1) + " min"};
}

Outcome meta_beats_plain(const std::vector<RunResult>& meta, const std::vector<RunResult>& plain) {
    int wins = 0;
    std::vector<double> gaps;
    for (int s = 0; s < kSeeds; ++s) {
        const double gap = meta[static_cast<std::size_t>(s)].test_accuracy - plain[static_cast<std::size_t>(s)].test_accuracy;
        gaps.push_back(gap);
        wins += gap >= 0.02;
    }
    std::vector<double> pa;
    for (const RunResult& r : plain) pa.push_back(r.test_accuracy);
    return {wins >= 2, "plain accuracy per seed " + list(pa) + ", meta minus plain " + list(gaps) + " (need >= 0.0200 in 2 of 3)"};
}

Outcome generalization_drop(const std::vector<RunResult>& meta, const RunResult& holdout) {
    int drops = 0;
    std::vector<double> gaps;
    for (const RunResult& r : meta) {
        gaps.push_back(r.test_accuracy - r.transfer_accuracy);
        drops += r.test_accuracy - r.transfer_accuracy >= 0.10;
    }
    return {drops >= 2 && holdout.test_accuracy > 0.125,
            "Center minus LeftRight accuracy per seed " + list(gaps) + " (need >= 0.1000 in 2 of 3), DistributeThree holdout " +
                fmt(holdout.test_accuracy) + " (need > 0.1250)"};
}

std::set<int> parse_list(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.insert(std::stoi(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    harness::retain_heap_memory();
    CLI::App app{"Acceptance criteria 1-10"};
    std::string work = "acceptance_work";
    std::string only, allow;
    app.add_option("--work-dir", work, "scratch and training cache directory");
    app.add_option("--only", only, "comma-separated criteria to run (default: all)");
    app.add_option("--allow-fail", allow, "criteria whose FAIL does not fail the exit status");
    CLI11_PARSE(app, argc, argv);

    try {
        const std::set<int> selected = parse_list(only);
        const std::set<int> allowed = parse_list(allow);
        auto wanted = [&](int c) { return selected.empty() || selected.count(c) != 0; };
        fs::create_directories(work);

        int hard_failures = 0;
        auto report = [&](int id, const char* title, const Outcome& o) {
            std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << o.detail << std::endl;
            if (!o.pass && allowed.count(id) == 0) ++hard_failures;
        };

        if (wanted(1) || wanted(2)) {
            const auto instances = corpus();
            if (wanted(1)) report(1, "oracle exactness", oracle_exactness(instances));
            if (wanted(2)) report(2, "generator soundness", generator_soundness(instances));
        }
        if (wanted(3)) report(3, "gradient suite", gradient_checks());
        if (wanted(4)) report(4, "masking invariant", masking_invariant());
        if (wanted(5)) report(5, "equivariance", equivariance());
        if (wanted(6)) report(6, "loss identities", loss_identities());

        if (wanted(7) || wanted(8) || wanted(9)) {
            Runs runs(work);
            std::vector<RunResult> meta, plain;
            for (int s = 0; s < kSeeds; ++s) meta.push_back(runs.get(model::Mode::Meta, static_cast<std::uint64_t>(s), false));
            if (wanted(7)) report(7, "desk-scale learning", desk_learning(meta));
            if (wanted(8)) {
                for (int s = 0; s < kSeeds; ++s) plain.push_back(runs.get(model::Mode::Plain, static_cast<std::uint64_t>(s), false));
                report(8, "meta beats plain", meta_beats_plain(meta, plain));
            }
            if (wanted(9)) report(9, "generalization drop", generalization_drop(meta, runs.get(model::Mode::Meta, 0, true)));
        }
        if (wanted(10)) report(10, "serialization", serialization(work));
        return hard_failures == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
