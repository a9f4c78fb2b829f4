#include "mmon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "mmon/error.hpp"
#include "mmon/rng.hpp"

namespace mmon::ag {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeMismatch("negative dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : impl_(std::make_shared<Impl>()) {
    if (numel(shape) != values.size()) {
        throw ShapeMismatch("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                            " values");
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return Tensor({static_cast<int>(values.size())}, std::vector<double>(values), requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw NotScalar("item() on tensor of shape " + shape_str(shape()));
    return impl_->values[0];
}

std::vector<double>& Tensor::grad_buffer() const {
    if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->values, requires_grad()); }

bool Tape::wants_grad(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::backward(const Tensor& root) {
    if (root.size() != 1) throw NotScalar("backward from non-scalar of shape " + shape_str(root.shape()));
    if (!root.requires_grad()) return;
    Tensor r = root;
    r.grad_buffer()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

namespace {

enum class Binary { Add, Sub, Mul };

Tensor binary(Tape& t, const Tensor& a, const Tensor& b, Binary op) {
    const bool same = a.shape() == b.shape();
    if (!same && a.size() != 1 && b.size() != 1) {
        throw ShapeMismatch("elementwise op on " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const Shape shape = same || b.size() == 1 ? a.shape() : b.shape();
    const std::size_t n = numel(shape);
    const std::size_t sa = a.size() == 1 && !same ? 0 : 1;
    const std::size_t sb = b.size() == 1 && !same ? 0 : 1;
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av[i * sa];
        const double y = bv[i * sb];
        out[i] = op == Binary::Add ? x + y : op == Binary::Sub ? x - y : x * y;
    }
    Tensor result(shape, std::move(out));
    if (t.wants_grad({&a, &b})) {
        result.set_requires_grad(true);
        t.push([a, b, result, op, sa, sb, n]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                auto bv = b.values();
                for (std::size_t i = 0; i < n; ++i) ga[i * sa] += op == Binary::Mul ? g[i] * bv[i * sb] : g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                auto av = a.values();
                for (std::size_t i = 0; i < n; ++i) {
                    gb[i * sb] += op == Binary::Mul ? g[i] * av[i * sa] : op == Binary::Sub ? -g[i] : g[i];
                }
            }
        });
    }
    return result;
}

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Dims {
    std::size_t outer, mid, inner;
};

Dims split_at(const Shape& s, int axis) {
    Dims d{1, static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) d.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) {
        d.inner *= static_cast<std::size_t>(s[i]);
    }
    return d;
}

}  // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) { return binary(t, a, b, Binary::Add); }
Tensor sub(Tape& t, const Tensor& a, const Tensor& b) { return binary(t, a, b, Binary::Sub); }
Tensor mul(Tape& t, const Tensor& a, const Tensor& b) { return binary(t, a, b, Binary::Mul); }

Tensor scale(Tape& t, const Tensor& a, double c) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= c;
    Tensor result(a.shape(), std::move(out));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        t.push([a, result, c]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }
    return result;
}

Tensor relu(Tape& t, const Tensor& a) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    Tensor result(a.shape(), std::move(out));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        t.push([a, result]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto x = a.values();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0) ga[i] += g[i];
            }
        });
    }
    return result;
}

Tensor add_bias(Tape& t, const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
        throw ShapeMismatch("add_bias " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    }
    const auto rows = static_cast<std::size_t>(x.dim(0));
    const auto cols = static_cast<std::size_t>(x.dim(1));
    std::vector<double> out(x.values().begin(), x.values().end());
    auto bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
    }
    Tensor result(x.shape(), std::move(out));
    if (t.wants_grad({&x, &b})) {
        result.set_requires_grad(true);
        t.push([x, b, result, rows, cols]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                }
            }
        });
    }
    return result;
}

Tensor add_channel_bias(Tape& t, const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
        throw ShapeMismatch("add_channel_bias " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    }
    const auto n = static_cast<std::size_t>(x.dim(0));
    const auto ch = static_cast<std::size_t>(x.dim(1));
    const auto hw = static_cast<std::size_t>(x.dim(2) * x.dim(3));
    std::vector<double> out(x.values().begin(), x.values().end());
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ch; ++c) {
            double* p = out.data() + (i * ch + c) * hw;
            for (std::size_t k = 0; k < hw; ++k) p[k] += bv[c];
        }
    }
    Tensor result(x.shape(), std::move(out));
    if (t.wants_grad({&x, &b})) {
        result.set_requires_grad(true);
        t.push([x, b, result, n, ch, hw]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            if (x.requires_grad()) {
                auto& gx = x.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t c = 0; c < ch; ++c) {
                        const double* p = g.data() + (i * ch + c) * hw;
                        gb[c] += std::accumulate(p, p + hw, 0.0);
                    }
                }
            }
        });
    }
    return result;
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeMismatch("matmul " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    }
    const int m = a.dim(0);
    const int k = a.dim(1);
    const int n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
    MapR(out.data(), m, n).noalias() = CMapR(a.values().data(), m, k) * CMapR(b.values().data(), k, n);
    Tensor result({m, n}, std::move(out));
    if (t.wants_grad({&a, &b})) {
        result.set_requires_grad(true);
        t.push([a, b, result, m, k, n]() mutable {
            if (!result.has_grad()) return;
            CMapR g(result.grad().data(), m, n);
            if (a.requires_grad()) {
                MapR(a.grad_buffer().data(), m, k).noalias() += g * CMapR(b.values().data(), k, n).transpose();
            }
            if (b.requires_grad()) {
                MapR(b.grad_buffer().data(), k, n).noalias() += CMapR(a.values().data(), m, k).transpose() * g;
            }
        });
    }
    return result;
}

namespace {

struct ConvGeom {
    int c, h, w, kh, kw, stride, pad, ho, wo;
    int rows() const { return c * kh * kw; }
    int plane() const { return ho * wo; }
    // Output columns whose tap kj lands inside the image: [lo, hi).
    std::pair<int, int> valid(int k, int size, int out) const {
        const int lo = pad - k <= 0 ? 0 : (pad - k + stride - 1) / stride;
        const int last = size - 1 + pad - k;
        const int hi = last < 0 ? 0 : std::min(out, last / stride + 1);
        return {std::min(lo, hi), hi};
    }
};

// Patch matrix of one image: cols[(ci, ki, kj)][(oy, ox)], zero for padding taps.
void im2col(const ConvGeom& g, const double* img, double* cols) {
    for (int ci = 0; ci < g.c; ++ci) {
        for (int ki = 0; ki < g.kh; ++ki) {
            const auto [oy0, oy1] = g.valid(ki, g.h, g.ho);
            for (int kj = 0; kj < g.kw; ++kj) {
                const auto [ox0, ox1] = g.valid(kj, g.w, g.wo);
                double* dst = cols + static_cast<std::ptrdiff_t>((ci * g.kh + ki) * g.kw + kj) * g.plane();
                std::fill(dst, dst + oy0 * g.wo, 0.0);
                for (int oy = oy0; oy < oy1; ++oy) {
                    double* d = dst + oy * g.wo;
                    const double* src = img + static_cast<std::ptrdiff_t>(ci * g.h + oy * g.stride - g.pad + ki) * g.w +
                                        kj - g.pad;
                    std::fill(d, d + ox0, 0.0);
                    for (int ox = ox0; ox < ox1; ++ox) d[ox] = src[ox * g.stride];
                    std::fill(d + ox1, d + g.wo, 0.0);
                }
                std::fill(dst + oy1 * g.wo, dst + g.plane(), 0.0);
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch gradients back onto the image.
void col2im(const ConvGeom& g, const double* cols, double* img) {
    for (int ci = 0; ci < g.c; ++ci) {
        for (int ki = 0; ki < g.kh; ++ki) {
            const auto [oy0, oy1] = g.valid(ki, g.h, g.ho);
            for (int kj = 0; kj < g.kw; ++kj) {
                const auto [ox0, ox1] = g.valid(kj, g.w, g.wo);
                const double* src = cols + static_cast<std::ptrdiff_t>((ci * g.kh + ki) * g.kw + kj) * g.plane();
                for (int oy = oy0; oy < oy1; ++oy) {
                    const double* s = src + oy * g.wo;
                    double* dst = img + static_cast<std::ptrdiff_t>(ci * g.h + oy * g.stride - g.pad + ki) * g.w +
                                  kj - g.pad;
                    for (int ox = ox0; ox < ox1; ++ox) dst[ox * g.stride] += s[ox];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(Tape& t, const Tensor& input, const Tensor& kernels, int stride, int pad) {
    const bool batched = input.rank() == 4;
    if ((!batched && input.rank() != 3) || kernels.rank() != 4) {
        throw ShapeMismatch("conv2d input " + shape_str(input.shape()) + " kernels " + shape_str(kernels.shape()));
    }
    if (stride < 1 || pad < 0) throw InvalidArgument("conv2d needs stride >= 1 and pad >= 0");
    const int off = batched ? 1 : 0;
    const int n = batched ? input.dim(0) : 1;
    ConvGeom g{input.dim(off), input.dim(off + 1), input.dim(off + 2), kernels.dim(2), kernels.dim(3), stride, pad, 0, 0};
    const int co = kernels.dim(0);
    if (kernels.dim(1) != g.c) {
        throw ShapeMismatch("conv2d channels: input " + shape_str(input.shape()) + " kernels " +
                            shape_str(kernels.shape()));
    }
    if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) throw ShapeMismatch("conv2d kernel larger than padded input");
    g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
    g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
    const int rows = g.rows();
    const int plane = g.plane();
    const std::size_t per_cols = static_cast<std::size_t>(rows) * plane;
    const std::size_t per_in = static_cast<std::size_t>(g.c) * g.h * g.w;
    const std::size_t per_out = static_cast<std::size_t>(co) * plane;

    // One patch matrix per image, kept for the kernel gradient.
    std::shared_ptr<double[]> cols(new double[per_cols * static_cast<std::size_t>(n)]);
    std::vector<double> out(per_out * static_cast<std::size_t>(n));
    auto x = input.values();
    const CMapR k(kernels.values().data(), co, rows);
    for (int b = 0; b < n; ++b) {
        double* cb = cols.get() + per_cols * static_cast<std::size_t>(b);
        im2col(g, x.data() + per_in * static_cast<std::size_t>(b), cb);
        MapR(out.data() + per_out * static_cast<std::size_t>(b), co, plane).noalias() = k * CMapR(cb, rows, plane);
    }
    Shape shape = batched ? Shape{n, co, g.ho, g.wo} : Shape{co, g.ho, g.wo};
    Tensor result(std::move(shape), std::move(out));
    if (t.wants_grad({&input, &kernels})) {
        result.set_requires_grad(true);
        t.push([input, kernels, result, cols, g, n, co, rows, plane, per_cols, per_in, per_out]() mutable {
            if (!result.has_grad()) return;
            auto gy = result.grad();
            if (kernels.requires_grad()) {
                MapR gk(kernels.grad_buffer().data(), co, rows);
                for (int b = 0; b < n; ++b) {
                    gk.noalias() += CMapR(gy.data() + per_out * static_cast<std::size_t>(b), co, plane) *
                                    CMapR(cols.get() + per_cols * static_cast<std::size_t>(b), rows, plane).transpose();
                }
            }
            if (input.requires_grad()) {
                auto& gx = input.grad_buffer();
                const CMapR k(kernels.values().data(), co, rows);
                MatR gcols(rows, plane);
                for (int b = 0; b < n; ++b) {
                    gcols.noalias() = k.transpose() * CMapR(gy.data() + per_out * static_cast<std::size_t>(b), co, plane);
                    col2im(g, gcols.data(), gx.data() + per_in * static_cast<std::size_t>(b));
                }
            }
        });
    }
    return result;
}

Tensor reduce(Tape& t, ReduceKind kind, const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.rank()) {
        throw BadAxis("axis " + std::to_string(axis) + " for shape " + shape_str(a.shape()));
    }
    const Dims d = split_at(a.shape(), axis);
    const double w = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(d.mid) : 1.0;
    Shape shape = a.shape();
    shape.erase(shape.begin() + axis);
    std::vector<double> out(d.outer * d.inner, 0.0);
    auto x = a.values();
    for (std::size_t o = 0; o < d.outer; ++o) {
        for (std::size_t m = 0; m < d.mid; ++m) {
            for (std::size_t i = 0; i < d.inner; ++i) out[o * d.inner + i] += x[(o * d.mid + m) * d.inner + i];
        }
    }
    if (w != 1.0) {
        for (double& v : out) v *= w;
    }
    Tensor result(std::move(shape), std::move(out));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        t.push([a, result, d, w]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t o = 0; o < d.outer; ++o) {
                for (std::size_t m = 0; m < d.mid; ++m) {
                    for (std::size_t i = 0; i < d.inner; ++i) {
                        ga[(o * d.mid + m) * d.inner + i] += w * g[o * d.inner + i];
                    }
                }
            }
        });
    }
    return result;
}

Tensor reduce_all(Tape& t, ReduceKind kind, const Tensor& a) {
    return reduce(t, kind, reshape(t, a, {static_cast<int>(a.size())}), 0);
}

Tensor reshape(Tape& t, const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw ShapeMismatch("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    Tensor result(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        t.push([a, result]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return result;
}

Tensor concat(Tape& t, std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw ShapeMismatch("concat of nothing");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size())) throw BadAxis("concat axis out of range");
    Shape shape = first;
    shape[static_cast<std::size_t>(axis)] = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != static_cast<int>(first.size())) throw ShapeMismatch("concat rank mismatch");
        for (int i = 0; i < p.rank(); ++i) {
            if (i != axis && p.dim(i) != first[static_cast<std::size_t>(i)]) {
                throw ShapeMismatch("concat " + shape_str(p.shape()) + " with " + shape_str(first));
            }
        }
        shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    }
    const Dims d = split_at(shape, axis);
    std::vector<double> out(numel(shape));
    std::vector<std::size_t> offsets;  // chunk offset of each part within one outer row
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        const std::size_t chunk = static_cast<std::size_t>(p.dim(axis)) * d.inner;
        auto v = p.values();
        for (std::size_t o = 0; o < d.outer; ++o) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                        out.begin() + static_cast<std::ptrdiff_t>(o * d.mid * d.inner + off));
        }
        off += chunk;
    }
    Tensor result(std::move(shape), std::move(out));
    bool any = false;
    for (const Tensor& p : parts) any = any || t.wants_grad({&p});
    if (any) {
        result.set_requires_grad(true);
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        t.push([inputs, result, offsets, d, axis]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                Tensor& p = inputs[k];
                if (!p.requires_grad()) continue;
                auto& gp = p.grad_buffer();
                const std::size_t chunk = static_cast<std::size_t>(p.dim(axis)) * d.inner;
                for (std::size_t o = 0; o < d.outer; ++o) {
                    for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * d.mid * d.inner + offsets[k] + i];
                }
            }
        });
    }
    return result;
}

Tensor gather_rows(Tape& t, const Tensor& a, std::span<const int> rows) {
    if (a.rank() < 1) throw ShapeMismatch("gather_rows on a scalar");
    const std::size_t width = a.size() / static_cast<std::size_t>(a.dim(0));
    Shape shape = a.shape();
    shape[0] = static_cast<int>(rows.size());
    std::vector<double> out(rows.size() * width);
    auto x = a.values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= a.dim(0)) throw BadIndex("gather row " + std::to_string(rows[r]));
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rows[r]) * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    Tensor result(std::move(shape), std::move(out));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        std::vector<int> idx(rows.begin(), rows.end());
        t.push([a, result, idx, width]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const std::size_t base = static_cast<std::size_t>(idx[r]) * width;
                for (std::size_t i = 0; i < width; ++i) ga[base + i] += g[r * width + i];
            }
        });
    }
    return result;
}

Tensor sum_row_groups(Tape& t, const Tensor& a, int group) {
    if (a.rank() != 2 || group <= 0 || a.dim(0) % group != 0) {
        throw ShapeMismatch("sum_row_groups of " + shape_str(a.shape()) + " by " + std::to_string(group));
    }
    const auto groups = static_cast<std::size_t>(a.dim(0) / group);
    const auto width = static_cast<std::size_t>(a.dim(1));
    const auto g_sz = static_cast<std::size_t>(group);
    std::vector<double> out(groups * width, 0.0);
    auto x = a.values();
    for (std::size_t r = 0; r < groups * g_sz; ++r) {
        for (std::size_t i = 0; i < width; ++i) out[(r / g_sz) * width + i] += x[r * width + i];
    }
    Tensor result({static_cast<int>(groups), static_cast<int>(width)}, std::move(out));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        t.push([a, result, width, g_sz]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t r = 0; r < ga.size() / width; ++r) {
                for (std::size_t i = 0; i < width; ++i) ga[r * width + i] += g[(r / g_sz) * width + i];
            }
        });
    }
    return result;
}

Tensor cosine_rows(Tape& t, const Tensor& a, const Tensor& b, double eps) {
    if (a.shape() != b.shape() || a.rank() < 1 || a.rank() > 2 || a.size() == 0) {
        throw ShapeMismatch("cosine of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t n = a.rank() == 2 ? static_cast<std::size_t>(a.dim(0)) : 1;
    const std::size_t d = a.size() / n;
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(n), na(n), nb(n);
    for (std::size_t r = 0; r < n; ++r) {
        double dot = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < d; ++i) {
            dot += av[r * d + i] * bv[r * d + i];
            aa += av[r * d + i] * av[r * d + i];
            bb += bv[r * d + i] * bv[r * d + i];
        }
        na[r] = std::sqrt(aa);
        nb[r] = std::sqrt(bb);
        out[r] = dot / (std::max(na[r], eps) * std::max(nb[r], eps));
    }
    Tensor result({static_cast<int>(n)}, out);
    if (t.wants_grad({&a, &b})) {
        result.set_requires_grad(true);
        t.push([a, b, result, out, na, nb, n, d, eps]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto av = a.values();
            auto bv = b.values();
            // dc/da = b / (|a|' |b|') - c a / (|a| |a|')   (second term only when |a| > eps)
            auto accumulate = [&](const Tensor& x, std::span<const double> xv, std::span<const double> yv,
                                  const std::vector<double>& nx, const std::vector<double>& ny) {
                if (!x.requires_grad()) return;
                auto& gx = x.grad_buffer();
                for (std::size_t r = 0; r < n; ++r) {
                    const double cx = std::max(nx[r], eps);
                    const double cy = std::max(ny[r], eps);
                    const double self = nx[r] > eps ? out[r] / (nx[r] * cx) : 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        gx[r * d + i] += g[r] * (yv[r * d + i] / (cx * cy) - self * xv[r * d + i]);
                    }
                }
            };
            accumulate(a, av, bv, na, nb);
            accumulate(b, bv, av, nb, na);
        });
    }
    return result;
}

Tensor cosine_similarity(Tape& t, const Tensor& a, const Tensor& b, double eps) {
    if (a.rank() != 1) throw ShapeMismatch("cosine_similarity expects vectors, got " + shape_str(a.shape()));
    return reshape(t, cosine_rows(t, a, b, eps), {});
}

Tensor softmax_cross_entropy(Tape& t, const Tensor& scores, int target) {
    if (scores.rank() != 1) throw ShapeMismatch("softmax_cross_entropy expects a vector");
    if (target < 0 || target >= scores.dim(0)) throw BadIndex("target " + std::to_string(target));
    auto s = scores.values();
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (double v : s) z += std::exp(v - m);
    const double lse = m + std::log(z);
    Tensor result = Tensor::scalar(lse - s[static_cast<std::size_t>(target)]);
    if (t.wants_grad({&scores})) {
        result.set_requires_grad(true);
        t.push([scores, result, lse, target]() mutable {
            if (!result.has_grad()) return;
            const double g = result.grad()[0];
            auto s = scores.values();
            auto& gs = scores.grad_buffer();
            for (std::size_t i = 0; i < s.size(); ++i) {
                const double p = std::exp(s[i] - lse);
                gs[i] += g * (p - (static_cast<int>(i) == target ? 1.0 : 0.0));
            }
        });
    }
    return result;
}

Tensor dropout(Tape& t, const Tensor& a, double rate, bool training, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1)");
    if (!training || rate == 0.0) return a;
    Rng rng(seed);
    const double keep = 1.0 / (1.0 - rate);
    std::vector<double> mask(a.size());
    for (double& m : mask) m = rng.uniform01() < rate ? 0.0 : keep;
    std::vector<double> out(a.size());
    auto x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    Tensor result(a.shape(), std::move(out));
    if (t.wants_grad({&a})) {
        result.set_requires_grad(true);
        t.push([a, result, mask]() mutable {
            if (!result.has_grad()) return;
            auto g = result.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
        });
    }
    return result;
}

}  // namespace mmon::ag
