#include "mmon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmon/rng.hpp"

namespace mmon::ag {

GradCheckResult gradient_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> inputs,
                               GradCheckOptions options) {
    std::vector<bool> saved;
    for (Tensor& x : inputs) {
        saved.push_back(x.requires_grad());
        x.set_requires_grad(true);
        x.zero_grad();
    }
    {
        Tape tape;
        tape.backward(f(tape));
    }
    auto eval = [&] {
        Tape quiet(false);
        return f(quiet).item();
    };

    Rng rng(options.seed);
    GradCheckResult result;
    for (Tensor& x : inputs) {
        std::vector<std::size_t> idx(x.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (options.max_probes != 0 && options.max_probes < idx.size()) {
            rng.shuffle(std::span<std::size_t>(idx));
            idx.resize(options.max_probes);
        }
        const std::vector<double> analytic(x.grad().begin(), x.grad().end());
        auto vals = x.values();
        auto central = [&](std::size_t i, double h) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double up = eval();
            vals[i] = orig - h;
            const double down = eval();
            vals[i] = orig;
            return (up - down) / (2.0 * h);
        };
        for (std::size_t i : idx) {
            const double numeric = central(i, options.h);
            if (options.kink_tolerance > 0.0) {
                const double half = central(i, options.h / 2);
                const double scale = std::max({std::abs(numeric), std::abs(half), 1e-8});
                if (std::abs(numeric - half) / scale > options.kink_tolerance) {
                    ++result.skipped;
                    continue;
                }
            }
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (err >= result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
            ++result.probes;
        }
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        inputs[i].clear_grad();
        inputs[i].set_requires_grad(saved[i]);
    }
    return result;
}

}  // namespace mmon::ag
