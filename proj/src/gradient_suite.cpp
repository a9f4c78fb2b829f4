#include "mmon/gradient_suite.hpp"

#include <algorithm>
#include <functional>

#include "mmon/gradcheck.hpp"
#include "mmon/model.hpp"
#include "mmon/rng.hpp"

namespace mmon::harness {

using ag::ReduceKind;
using ag::Tape;
using ag::Tensor;

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

Tensor random_tensor(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<double> v(ag::numel(shape));
    for (double& x : v) x = rng.uniform_real(lo, hi);
    return Tensor(std::move(shape), std::move(v), grad);
}

Tensor kink_free(ag::Shape shape, Rng& rng) {
    std::vector<double> v(ag::numel(shape));
    for (double& x : v) x = (rng.coin() ? 1.0 : -1.0) * rng.uniform_real(0.05, 1.0);
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor weights(const ag::Shape& shape, Rng& rng) { return random_tensor(shape, rng, -1.0, 1.0, false); }

Tensor project(Tape& t, const Tensor& x, const Tensor& w) {
    return ag::reduce_all(t, ReduceKind::Sum, ag::mul(t, x, w));
}

using Case = std::function<std::pair<std::function<Tensor(Tape&)>, std::vector<Tensor>>(Rng&)>;

std::vector<std::pair<std::string, Case>> op_cases() {
    std::vector<std::pair<std::string, Case>> cases;
    auto binary = [](auto op) {
        return [op](Rng& rng) {
            Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), w = weights({3, 4}, rng);
            return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, op(t, a, b), w); }),
                             std::vector<Tensor>{a, b}};
        };
    };
    cases.emplace_back("add", binary([](Tape& t, const Tensor& a, const Tensor& b) { return ag::add(t, a, b); }));
    cases.emplace_back("sub", binary([](Tape& t, const Tensor& a, const Tensor& b) { return ag::sub(t, a, b); }));
    cases.emplace_back("mul", binary([](Tape& t, const Tensor& a, const Tensor& b) { return ag::mul(t, a, b); }));
    cases.emplace_back("scalar_mul", [](Rng& rng) {
        Tensor s = random_tensor({}, rng), a = random_tensor({3, 4}, rng), w = weights({3, 4}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::mul(t, s, a), w); }),
                         std::vector<Tensor>{s, a}};
    });
    cases.emplace_back("relu", [](Rng& rng) {
        Tensor a = kink_free({3, 4}, rng), w = weights({3, 4}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::relu(t, a), w); }),
                         std::vector<Tensor>{a}};
    });
    cases.emplace_back("matmul", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), w = weights({3, 5}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::matmul(t, a, b), w); }),
                         std::vector<Tensor>{a, b}};
    });
    cases.emplace_back("add_bias", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng), w = weights({3, 4}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::add_bias(t, a, b), w); }),
                         std::vector<Tensor>{a, b}};
    });
    cases.emplace_back("conv2d", [](Rng& rng) {
        Tensor x = random_tensor({2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng), w = weights({3, 3, 3}, rng);
        return std::pair{
            std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::conv2d(t, x, k, 1, 0), w); }),
            std::vector<Tensor>{x, k}};
    });
    cases.emplace_back("conv2d_strided", [](Rng& rng) {
        Tensor x = random_tensor({2, 2, 7, 7}, rng), k = random_tensor({3, 2, 3, 3}, rng);
        Tensor b = random_tensor({3}, rng), w = weights({2, 3, 4, 4}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) {
                             return project(t, ag::add_channel_bias(t, ag::conv2d(t, x, k, 2, 1), b), w);
                         }),
                         std::vector<Tensor>{x, k, b}};
    });
    cases.emplace_back("reduce", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng), w1 = weights({3}, rng), w0 = weights({4}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) {
                             return ag::add(t, project(t, ag::reduce(t, ReduceKind::Sum, a, 1), w1),
                                            project(t, ag::reduce(t, ReduceKind::Mean, a, 0), w0));
                         }),
                         std::vector<Tensor>{a}};
    });
    cases.emplace_back("concat_gather", [](Rng& rng) {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 2}, rng), w = weights({4, 6}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) {
                             const std::array<Tensor, 2> parts = {a, b};
                             const std::vector<int> idx = {2, 0, 2, 1};
                             return project(t, ag::gather_rows(t, ag::concat(t, parts, 1), idx), w);
                         }),
                         std::vector<Tensor>{a, b}};
    });
    cases.emplace_back("sum_row_groups", [](Rng& rng) {
        Tensor a = random_tensor({6, 4}, rng), w = weights({3, 4}, rng);
        return std::pair{
            std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::sum_row_groups(t, a, 2), w); }),
            std::vector<Tensor>{a}};
    });
    cases.emplace_back("cosine_similarity", [](Rng& rng) {
        Tensor a = random_tensor({6}, rng), b = random_tensor({6}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return ag::cosine_similarity(t, a, b); }),
                         std::vector<Tensor>{a, b}};
    });
    cases.emplace_back("cosine_rows", [](Rng& rng) {
        Tensor a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng), w = weights({3}, rng);
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::cosine_rows(t, a, b), w); }),
                         std::vector<Tensor>{a, b}};
    });
    cases.emplace_back("softmax_cross_entropy", [](Rng& rng) {
        Tensor s = random_tensor({8}, rng, -2.0, 2.0);
        const int y = static_cast<int>(rng.below(8));
        return std::pair{std::function<Tensor(Tape&)>([=](Tape& t) { return ag::softmax_cross_entropy(t, s, y); }),
                         std::vector<Tensor>{s}};
    });
    cases.emplace_back("dropout", [](Rng& rng) {
        Tensor a = random_tensor({10}, rng), w = weights({10}, rng);
        const std::uint64_t seed = rng.next_u64();
        return std::pair{
            std::function<Tensor(Tape&)>([=](Tape& t) { return project(t, ag::dropout(t, a, 0.3, true, seed), w); }),
            std::vector<Tensor>{a}};
    });
    return cases;
}

// A scaled-down model on random 16x16 panels; the full meta-mode training loss.
GradCheckEntry model_check(int trials, Rng& rng) {
    GradCheckEntry entry{"end_to_end_model", 0.0, kModelTolerance, 0};
    const model::ModelConfig small{8, 4, 8, 8, 4, 4};
    for (int trial = 0; trial < trials; ++trial) {
        model::Params params(small, rng.next_u64());
        // Non-zero biases keep relu inputs away from exact zeros.
        for (Tensor p : params.tensors()) {
            if (p.rank() == 1) {
                for (double& v : p.values()) v = rng.uniform_real(-0.1, 0.1);
            }
        }
        Tensor panels = random_tensor({16, 1, 16, 16}, rng, 0.0, 1.0, false);
        RuleAnnotation ann;
        ann.rules = {{0, Attribute::Type, RuleKind::progression(1)},
                     {0, Attribute::Size, RuleKind::constant()},
                     {0, Attribute::Color, RuleKind::distribute_three(0)}};
        const int label = static_cast<int>(rng.below(8));
        auto f = [&](Tape& t) {
            const auto sv = model::score_candidates(t, panels, ConfigKind::Center, params, model::Mode::Meta, &ann);
            return ag::add(t, model::loss(t, sv.s, label, 0.01), ag::scale(t, sv.alignment, 0.1));
        };
        // Probe a random encoder tensor plus one module and the rule table.
        std::vector<Tensor> tensors = params.tensors();
        const std::vector<int> owner = params.module_of();
        std::vector<Tensor> probed;
        const std::size_t encoder_tensors = 18;  // three encoders x (k1, b1, k2, b2, proj.w, proj.b)
        probed.push_back(tensors[rng.below(encoder_tensors)]);
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            if (owner[i] == model::module_index(0, Attribute::Color)) {
                probed.push_back(tensors[i]);
                break;
            }
        }
        probed.push_back(params.rule_table);
        const auto r = ag::gradient_check(f, probed, {.h = 1e-5, .max_probes = 6, .seed = rng.next_u64(), .kink_tolerance = 1e-4});
        entry.max_rel_error = std::max(entry.max_rel_error, r.max_rel_error);
        entry.probes += r.probes;
        entry.skipped += r.skipped;
    }
    return entry;
}

}  // namespace

std::vector<GradCheckEntry> gradient_suite(int trials, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckEntry> out;
    for (const auto& [name, make] : op_cases()) {
        GradCheckEntry entry{name, 0.0, kOpTolerance, 0};
        for (int trial = 0; trial < trials; ++trial) {
            auto [f, inputs] = make(rng);
            const auto r = ag::gradient_check(f, inputs);
            entry.max_rel_error = std::max(entry.max_rel_error, r.max_rel_error);
            entry.probes += r.probes;
        }
        out.push_back(entry);
    }
    out.push_back(model_check(trials, rng));
    return out;
}

}  // namespace mmon::harness
