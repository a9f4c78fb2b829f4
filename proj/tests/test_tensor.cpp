#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mmon/adam.hpp"
#include "mmon/error.hpp"
#include "mmon/gradcheck.hpp"
#include "mmon/rng.hpp"
#include "mmon/tensor.hpp"

using namespace mmon;
using namespace mmon::ag;
using Catch::Approx;

namespace {

constexpr int kTrials = 20;
constexpr double kOpTol = 1e-4;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform_real(lo, hi);
    return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so relu never sits near its kink.
Tensor kink_free_tensor(Shape shape, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = (rng.coin() ? 1.0 : -1.0) * rng.uniform_real(0.05, 1.0);
    return Tensor(std::move(shape), std::move(v), true);
}

// Random linear functional, turning any tensor into a scalar.
Tensor project(Tape& t, const Tensor& x, const Tensor& w) { return reduce_all(t, ReduceKind::Sum, mul(t, x, w)); }

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Direct cross-correlation, written independently of the im2col path.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, int stride, int pad) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> out;
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double s = 0;
                for (int ci = 0; ci < c; ++ci) {
                    for (int i = 0; i < kh; ++i) {
                        for (int j = 0; j < kw; ++j) {
                            const int y = oy * stride - pad + i, xx = ox * stride - pad + j;
                            if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                            s += x.values()[static_cast<std::size_t>((ci * h + y) * w + xx)] *
                                 k.values()[static_cast<std::size_t>(((o * c + ci) * kh + i) * kw + j)];
                        }
                    }
                }
                out.push_back(s);
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("elementwise examples", "[tensor]") {
    Tape t;
    CHECK(vals(add(t, Tensor::vector({1, 2}), Tensor::vector({3, 4}))) == std::vector<double>{4, 6});
    CHECK(vals(relu(t, Tensor::vector({-1, 0, 2}))) == std::vector<double>{0, 0, 2});
    CHECK(vals(sub(t, Tensor::vector({1, 2}), Tensor::vector({3, 5}))) == std::vector<double>{-2, -3});
    CHECK(vals(mul(t, Tensor::scalar(2), Tensor::vector({3, 5}))) == std::vector<double>{6, 10});
    CHECK_THROWS_AS(add(t, Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), ShapeMismatch);
}

TEST_CASE("product rule and fan-out", "[tensor]") {
    Tensor a = Tensor::vector({2}, true);
    Tensor b = Tensor::vector({3}, true);
    Tape t;
    t.backward(reshape(t, mul(t, a, b), {}));
    CHECK(a.grad()[0] == 3.0);
    CHECK(b.grad()[0] == 2.0);

    Tensor x = Tensor::scalar(5, true);
    Tape t2;
    t2.backward(x);
    CHECK(x.grad()[0] == 1.0);
    x.clear_grad();
    Tape t3;
    t3.backward(add(t3, x, x));
    CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("relu subgradient at zero is zero", "[tensor]") {
    Tensor x = Tensor::vector({0.0, 1.0, -1.0}, true);
    Tape t;
    t.backward(reduce_all(t, ReduceKind::Sum, relu(t, x)));
    CHECK(vals(Tensor({3}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{0, 1, 0});
}

TEST_CASE("backward requires a scalar root", "[tensor]") {
    Tape t;
    Tensor x = Tensor::vector({1, 2}, true);
    CHECK_THROWS_AS(t.backward(scale(t, x, 2.0)), NotScalar);
}

TEST_CASE("non-recording tape builds no graph", "[tensor]") {
    Tape t(false);
    Tensor x = Tensor::vector({1, 2}, true);
    Tensor y = mul(t, x, x);
    CHECK(t.size() == 0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("matmul examples", "[tensor]") {
    Tape t;
    Tensor m({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    CHECK(vals(matmul(t, eye, m)) == vals(m));
    CHECK(vals(matmul(t, Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}))) == std::vector<double>{11});
    CHECK_THROWS_AS(matmul(t, m, Tensor({3, 1}, {1, 2, 3})), ShapeMismatch);
}

TEST_CASE("matmul agrees with a triple loop", "[tensor]") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tape t;
    const auto c = vals(matmul(t, a, b));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 5; ++j) {
            double s = 0;
            for (int k = 0; k < 4; ++k) s += a.values()[static_cast<std::size_t>(i * 4 + k)] * b.values()[static_cast<std::size_t>(k * 5 + j)];
            CHECK(c[static_cast<std::size_t>(i * 5 + j)] == Approx(s).margin(1e-12));
        }
    }
}

TEST_CASE("conv2d examples", "[tensor]") {
    Tape t;
    Rng rng(3);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor id({2, 2, 1, 1}, {1, 0, 0, 1});
    CHECK(vals(conv2d(t, x, id, 1, 0)) == vals(x));

    Tensor ones({1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor k({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor y = conv2d(t, ones, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y.values()[0] == 9.0);

    CHECK_THROWS_AS(conv2d(t, x, Tensor::zeros({1, 3, 3, 3}), 1, 0), ShapeMismatch);
}

TEST_CASE("conv2d matches direct evaluation", "[tensor]") {
    Rng rng(5);
    for (auto [stride, pad] : {std::pair{1, 0}, std::pair{2, 1}, std::pair{2, 0}, std::pair{1, 1}}) {
        Tensor x = random_tensor({2, 7, 6}, rng);
        Tensor k = random_tensor({3, 2, 3, 3}, rng);
        Tape t;
        const auto got = vals(conv2d(t, x, k, stride, pad));
        const auto want = naive_conv(x, k, stride, pad);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == Approx(want[i]).margin(1e-12));
    }
}

TEST_CASE("batched conv2d equals per-image conv2d", "[tensor]") {
    Rng rng(8);
    Tensor xb = random_tensor({3, 2, 6, 6}, rng);
    Tensor k = random_tensor({4, 2, 3, 3}, rng);
    Tape t;
    const auto batched = vals(conv2d(t, xb, k, 2, 1));
    std::vector<double> stacked;
    for (int b = 0; b < 3; ++b) {
        Tensor xi({2, 6, 6}, std::vector<double>(xb.values().begin() + b * 72, xb.values().begin() + (b + 1) * 72));
        const auto part = vals(conv2d(t, xi, k, 2, 1));
        stacked.insert(stacked.end(), part.begin(), part.end());
    }
    REQUIRE(batched.size() == stacked.size());
    for (std::size_t i = 0; i < batched.size(); ++i) CHECK(batched[i] == Approx(stacked[i]).margin(1e-12));
}

TEST_CASE("reduce examples", "[tensor]") {
    Tape t;
    CHECK(reduce(t, ReduceKind::Sum, Tensor::vector({1, 2, 3}), 0).item() == 6.0);
    CHECK(reduce(t, ReduceKind::Mean, Tensor::vector({2, 4}), 0).item() == 3.0);
    CHECK(vals(reduce(t, ReduceKind::Sum, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), 1)) == std::vector<double>{6, 15});
    CHECK(vals(reduce(t, ReduceKind::Sum, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), 0)) == std::vector<double>{5, 7, 9});
    CHECK_THROWS_AS(reduce(t, ReduceKind::Sum, Tensor::vector({1}), 1), BadAxis);

    Tensor x = Tensor::vector({1, 2, 3, 4}, true);
    Tape g;
    g.backward(reduce(g, ReduceKind::Mean, x, 0));
    for (double v : x.grad()) CHECK(v == 0.25);
}

TEST_CASE("cosine similarity examples and properties", "[tensor]") {
    Tape t;
    CHECK(cosine_similarity(t, Tensor::vector({1, 0}), Tensor::vector({1, 0})).item() == Approx(1.0));
    CHECK(cosine_similarity(t, Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == 0.0);
    CHECK(cosine_similarity(t, Tensor::vector({3, 4}), Tensor::vector({4, 3})).item() == Approx(24.0 / 25.0).epsilon(1e-14));
    CHECK_THROWS_AS(cosine_similarity(t, Tensor::vector({1, 0}), Tensor::vector({1, 0, 0})), ShapeMismatch);

    Rng rng(21);
    for (int i = 0; i < kTrials; ++i) {
        Tensor a = random_tensor({6}, rng);
        Tensor neg = scale(t, a, -1.0);
        CHECK(cosine_similarity(t, a, a).item() == Approx(1.0).margin(1e-12));
        CHECK(cosine_similarity(t, a, neg).item() == Approx(-1.0).margin(1e-12));
    }

    Tensor zero = Tensor::vector({0, 0, 0}, true);
    Tensor b = Tensor::vector({1, 2, 3}, true);
    Tape g;
    Tensor c = cosine_similarity(g, zero, b);
    CHECK(c.item() == 0.0);
    g.backward(c);
    for (double v : zero.grad()) CHECK(std::isfinite(v));
}

TEST_CASE("softmax cross-entropy examples", "[tensor]") {
    Tape t;
    Tensor uniform = Tensor::zeros({8});
    CHECK(std::abs(softmax_cross_entropy(t, uniform, 3).item() - std::log(8.0)) < 1e-9);
    CHECK(softmax_cross_entropy(t, uniform, 0).item() == Approx(2.0794415).epsilon(1e-7));

    Tensor peaked = Tensor::vector({10, 0, 0, 0, 0, 0, 0, 0});
    const double ce = softmax_cross_entropy(t, peaked, 0).item();
    CHECK(ce < 0.01);
    CHECK(ce == Approx(std::log(1.0 + 7.0 * std::exp(-10.0))).epsilon(1e-12));
    CHECK_THROWS_AS(softmax_cross_entropy(t, uniform, 8), BadIndex);
    CHECK_THROWS_AS(softmax_cross_entropy(t, uniform, -1), BadIndex);

    // huge scores stay finite thanks to max subtraction
    CHECK(std::isfinite(softmax_cross_entropy(t, Tensor::vector({1000, -1000, 0, 0, 0, 0, 0, 0}), 1).item()));
}

TEST_CASE("softmax cross-entropy gradient is softmax minus one-hot", "[tensor]") {
    Rng rng(4);
    for (int trial = 0; trial < kTrials; ++trial) {
        Tensor s = random_tensor({8}, rng, -3, 3);
        const int y = static_cast<int>(rng.below(8));
        Tape t;
        Tensor loss = softmax_cross_entropy(t, s, y);
        CHECK(loss.item() >= 0.0);
        t.backward(loss);
        double z = 0;
        for (double v : s.values()) z += std::exp(v);
        for (int i = 0; i < 8; ++i) {
            const double p = std::exp(s.values()[static_cast<std::size_t>(i)]) / z;
            CHECK(s.grad()[static_cast<std::size_t>(i)] == Approx(p - (i == y ? 1.0 : 0.0)).margin(1e-12));
        }
    }
}

TEST_CASE("shape utilities", "[tensor]") {
    Tape t;
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({1, 2}, {5, 6});
    std::vector<Tensor> parts{a, b};
    CHECK(vals(concat(t, parts, 0)) == std::vector<double>{1, 2, 3, 4, 5, 6});
    std::vector<Tensor> cols{a, Tensor({2, 1}, {7, 8})};
    CHECK(vals(concat(t, cols, 1)) == std::vector<double>{1, 2, 7, 3, 4, 8});
    CHECK_THROWS_AS(concat(t, cols, 0), ShapeMismatch);

    const std::vector<int> idx{1, 1, 0};
    CHECK(vals(gather_rows(t, a, idx)) == std::vector<double>{3, 4, 3, 4, 1, 2});
    const std::vector<int> bad{2};
    CHECK_THROWS_AS(gather_rows(t, a, bad), BadIndex);

    Tensor r({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(vals(sum_row_groups(t, r, 2)) == std::vector<double>{4, 6, 12, 14});
    CHECK_THROWS_AS(sum_row_groups(t, r, 3), ShapeMismatch);
    CHECK_THROWS_AS(reshape(t, r, {3, 3}), ShapeMismatch);
}

TEST_CASE("dropout is the identity outside training", "[tensor]") {
    Tape t;
    Tensor x = Tensor::vector({1, 2, 3});
    CHECK(dropout(t, x, 0.5, false, 1).same_storage(x));
    CHECK(dropout(t, x, 0.0, true, 1).same_storage(x));
    Tensor big = Tensor({1000}, std::vector<double>(1000, 1.0));
    const auto d = vals(dropout(t, big, 0.5, true, 9));
    for (double v : d) CHECK((v == 0.0 || v == 2.0));
}

TEST_CASE("gradient check: linear function is exact", "[gradcheck]") {
    Rng rng(1);
    Tensor x = random_tensor({5}, rng);
    Tensor w = random_tensor({5}, rng);
    w.set_requires_grad(false);
    auto r = gradient_check([&](Tape& t) { return project(t, x, w); }, {x});
    CHECK(r.probes == 5);
    CHECK(r.max_rel_error < 1e-10);
}

TEST_CASE("gradient check: every op over random trials", "[gradcheck]") {
    Rng rng(2024);
    double worst = 0;
    auto check = [&](const std::function<Tensor(Tape&)>& f, std::vector<Tensor> in) {
        const double e = gradient_check(f, std::move(in)).max_rel_error;
        worst = std::max(worst, e);
        CHECK(e < kOpTol);
    };
    for (int trial = 0; trial < kTrials; ++trial) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({3, 4}, rng);
        w.set_requires_grad(false);
        check([&](Tape& t) { return project(t, add(t, a, b), w); }, {a, b});
        check([&](Tape& t) { return project(t, sub(t, a, b), w); }, {a, b});
        check([&](Tape& t) { return project(t, mul(t, a, b), w); }, {a, b});
        check([&](Tape& t) { return project(t, scale(t, a, -1.7), w); }, {a});

        Tensor s = random_tensor({}, rng);
        check([&](Tape& t) { return project(t, mul(t, s, a), w); }, {s, a});

        Tensor k = kink_free_tensor({3, 4}, rng);
        check([&](Tape& t) { return project(t, relu(t, k), w); }, {k});

        Tensor m = random_tensor({4, 5}, rng);
        Tensor wm = random_tensor({3, 5}, rng);
        wm.set_requires_grad(false);
        check([&](Tape& t) { return project(t, matmul(t, a, m), wm); }, {a, m});

        Tensor bias = random_tensor({4}, rng);
        check([&](Tape& t) { return project(t, add_bias(t, a, bias), w); }, {a, bias});

        Tensor x = random_tensor({2, 5, 5}, rng);
        Tensor ker = random_tensor({3, 2, 3, 3}, rng);
        Tensor wc = random_tensor({3, 3, 3}, rng);
        wc.set_requires_grad(false);
        check([&](Tape& t) { return project(t, conv2d(t, x, ker, 1, 0), wc); }, {x, ker});
        Tensor wc2 = random_tensor({3, 3, 3}, rng);
        wc2.set_requires_grad(false);
        check([&](Tape& t) { return project(t, conv2d(t, x, ker, 2, 1), wc2); }, {x, ker});

        Tensor xb = random_tensor({2, 2, 5, 5}, rng);
        Tensor cb = random_tensor({2}, rng);
        Tensor wb = random_tensor({2, 2, 5, 5}, rng);
        wb.set_requires_grad(false);
        check([&](Tape& t) { return project(t, add_channel_bias(t, xb, cb), wb); }, {xb, cb});

        Tensor wr = random_tensor({3}, rng);
        wr.set_requires_grad(false);
        check([&](Tape& t) { return project(t, reduce(t, ReduceKind::Sum, a, 1), wr); }, {a});
        Tensor wr0 = random_tensor({4}, rng);
        wr0.set_requires_grad(false);
        check([&](Tape& t) { return project(t, reduce(t, ReduceKind::Mean, a, 0), wr0); }, {a});

        std::vector<Tensor> parts{a, b};
        Tensor wcat = random_tensor({3, 8}, rng);
        wcat.set_requires_grad(false);
        check([&](Tape& t) { return project(t, concat(t, parts, 1), wcat); }, {a, b});

        const std::vector<int> idx{2, 0, 2};
        check([&](Tape& t) { return project(t, gather_rows(t, a, idx), w); }, {a});

        Tensor r6 = random_tensor({6, 4}, rng);
        check([&](Tape& t) { return project(t, sum_row_groups(t, r6, 2), w); }, {r6});

        Tensor wcos = random_tensor({3}, rng);
        wcos.set_requires_grad(false);
        check([&](Tape& t) { return project(t, cosine_rows(t, a, b), wcos); }, {a, b});

        Tensor va = random_tensor({6}, rng);
        Tensor vb = random_tensor({6}, rng);
        check([&](Tape& t) { return cosine_similarity(t, va, vb); }, {va, vb});

        Tensor sc = random_tensor({8}, rng, -2, 2);
        const int y = static_cast<int>(rng.below(8));
        check([&](Tape& t) { return softmax_cross_entropy(t, sc, y); }, {sc});

        Tensor dx = random_tensor({10}, rng);
        Tensor wd = random_tensor({10}, rng);
        wd.set_requires_grad(false);
        const auto seed = rng.next_u64();
        check([&](Tape& t) { return project(t, dropout(t, dx, 0.3, true, seed), wd); }, {dx});
    }
    INFO("worst relative error " << worst);
    CHECK(worst < kOpTol);
}

TEST_CASE("gradient check: conv composite", "[gradcheck]") {
    Rng rng(77);
    for (int trial = 0; trial < kTrials; ++trial) {
        Tensor x = random_tensor({1, 2, 8, 8}, rng);
        Tensor k1 = random_tensor({3, 2, 3, 3}, rng);
        Tensor b1 = random_tensor({3}, rng);
        Tensor k2 = random_tensor({2, 3, 3, 3}, rng);
        auto f = [&](Tape& t) {
            Tensor h = add_channel_bias(t, conv2d(t, x, k1, 2, 1), b1);
            h = conv2d(t, h, k2, 2, 1);
            return reduce_all(t, ReduceKind::Mean, mul(t, h, h));
        };
        CHECK(gradient_check(f, {x, k1, b1, k2}).max_rel_error < kOpTol);
    }
}

TEST_CASE("backward is linear in the root", "[tensor]") {
    Rng rng(6);
    for (int trial = 0; trial < kTrials; ++trial) {
        Tensor x = random_tensor({4}, rng);
        Tensor w = random_tensor({4}, rng);
        const double alpha = rng.uniform_real(-2, 2), beta = rng.uniform_real(-2, 2);
        auto grad_of = [&](auto build) {
            x.clear_grad();
            Tape t;
            t.backward(build(t));
            return std::vector<double>(x.grad().begin(), x.grad().end());
        };
        auto f = [&](Tape& t) { return reduce_all(t, ReduceKind::Sum, mul(t, x, x)); };
        auto g = [&](Tape& t) { return cosine_similarity(t, x, w); };
        const auto gf = grad_of(f);
        const auto gg = grad_of(g);
        const auto gc = grad_of([&](Tape& t) { return add(t, scale(t, f(t), alpha), scale(t, g(t), beta)); });
        for (std::size_t i = 0; i < 4; ++i) CHECK(gc[i] == Approx(alpha * gf[i] + beta * gg[i]).margin(1e-12));
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged", "[adam]") {
    std::vector<Tensor> params{Tensor::vector({1.5, -2.0}, true), Tensor({2, 2}, {1, 2, 3, 4}, true)};
    const auto before0 = vals(params[0]);
    const auto before1 = vals(params[1]);
    AdamState state(params, {});
    for (int i = 0; i < 3; ++i) {
        for (auto& p : params) p.zero_grad();
        adam_step(params, state);
    }
    CHECK(vals(params[0]) == before0);
    CHECK(vals(params[1]) == before1);
    CHECK(state.step == 3);
}

TEST_CASE("adam: first step with unit gradient", "[adam]") {
    std::vector<Tensor> params{Tensor::scalar(0.5, true)};
    AdamState state(params, {.lr = 0.01});
    params[0].grad_buffer()[0] = 1.0;
    adam_step(params, state);
    // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is lr / (1 + eps)
    CHECK(params[0].item() == Approx(0.5 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(params[0].grad()[0] == 0.0);
    params[0].grad_buffer()[0] = 1.0;
    adam_step(params, state);
    CHECK(state.step == 2);
    CHECK(params[0].item() == Approx(0.5 - 2 * 0.01 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: missing gradient and frozen parameters", "[adam]") {
    std::vector<Tensor> params{Tensor::scalar(1.0, true), Tensor::scalar(2.0, true)};
    AdamState state(params, {});
    CHECK_THROWS_AS(adam_step(params, state), MissingGrad);

    params[0].grad_buffer()[0] = 1.0;
    params[1].grad_buffer()[0] = 1.0;
    const bool mask[2] = {true, false};
    adam_step(params, state, mask);
    CHECK(params[0].item() != 1.0);
    CHECK(params[1].item() == 2.0);
    CHECK(state.t[1] == 0);
    CHECK(params[1].grad()[0] == 0.0);
}
