#pragma once

// Dense f64 tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same storage. Operations are
// free functions taking the Tape that records them; a non-recording tape
// evaluates without building the backward graph. Broadcasting is limited to
// one-element (scalar) operands, plus the explicit bias ops.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmon::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return impl_->values.size(); }

    std::span<double> values() { return impl_->values; }
    std::span<const double> values() const { return impl_->values; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    /// Empty until backward reaches this tensor or zero_grad() is called.
    std::span<double> grad() { return impl_->grad; }
    std::span<const double> grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() { impl_->grad.assign(impl_->values.size(), 0.0); }
    void clear_grad() { impl_->grad.clear(); }

    /// Gradient buffer, allocated as zeros on first use. Handles share
    /// storage, so this is available through const handles.
    std::vector<double>& grad_buffer() const;

    /// Deep copy without gradient or tape history.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

/// Ordered record of executed operations. backward() replays the recorded
/// local-gradient closures in exact reverse order.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return entries_.size(); }

    /// Whether an op on these inputs must be recorded.
    bool wants_grad(std::initializer_list<const Tensor*> inputs) const;
    void push(std::function<void()> backward) { entries_.push_back(std::move(backward)); }

    /// Seeds d(root)/d(root) = 1 and accumulates into every tensor that
    /// requires a gradient. Throws NotScalar unless root has one element.
    void backward(const Tensor& root);

    void clear() { entries_.clear(); }

private:
    bool recording_;
    std::vector<std::function<void()>> entries_;
};

enum class ReduceKind { Sum, Mean };

// Elementwise. Shapes must match unless one operand has a single element.
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double c);
/// Subgradient 0 at the kink.
Tensor relu(Tape& t, const Tensor& a);

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);

/// x[N x M] + b[M] added to every row.
Tensor add_bias(Tape& t, const Tensor& x, const Tensor& b);

/// x[N x C x H x W] + b[C] added to every pixel of channel c.
Tensor add_channel_bias(Tape& t, const Tensor& x, const Tensor& b);

/// Cross-correlation. input [C x H x W] or [N x C x H x W], kernels
/// [Co x Ci x kh x kw]. Output side is floor((H + 2 pad - kh) / stride) + 1.
Tensor conv2d(Tape& t, const Tensor& input, const Tensor& kernels, int stride, int pad);

/// Reduction along one axis (removed from the shape). Throws BadAxis.
Tensor reduce(Tape& t, ReduceKind kind, const Tensor& a, int axis);
/// Reduction over every element to a scalar.
Tensor reduce_all(Tape& t, ReduceKind kind, const Tensor& a);

Tensor reshape(Tape& t, const Tensor& a, Shape shape);

/// Concatenation along `axis`; other dimensions must agree.
Tensor concat(Tape& t, std::span<const Tensor> parts, int axis);

/// Rows of a [N x ...] tensor picked by index (repeats allowed).
Tensor gather_rows(Tape& t, const Tensor& a, std::span<const int> rows);

/// Sum of groups of consecutive rows: [G*n x M] -> [G x M].
Tensor sum_row_groups(Tape& t, const Tensor& a, int group);

/// Row-wise cosine similarity of [N x d] matrices -> [N], with each norm
/// clamped below at eps.
Tensor cosine_rows(Tape& t, const Tensor& a, const Tensor& b, double eps = 1e-8);

/// Cosine similarity of two vectors -> scalar.
Tensor cosine_similarity(Tape& t, const Tensor& a, const Tensor& b, double eps = 1e-8);

/// -log softmax(scores)[target] with max subtraction. Throws BadIndex.
Tensor softmax_cross_entropy(Tape& t, const Tensor& scores, int target);

/// Inverted dropout when training with rate > 0; identity otherwise.
Tensor dropout(Tape& t, const Tensor& a, double rate, bool training, std::uint64_t seed);

}  // namespace mmon::ag
