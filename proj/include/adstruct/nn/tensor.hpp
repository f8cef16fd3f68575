#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adstruct/errors.hpp"

namespace adstruct::nn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major float64 array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage, which is what the
// tape needs to route gradients back to the tensors an op consumed. Use
// clone() for an independent copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : Tensor(shape, std::vector<double>(checked_size(shape), 0.0)) {}

    Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<Storage>()) {
        if (values.size() != checked_size(shape)) {
            throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                                 std::to_string(values.size()) + " values");
        }
        s_->shape = std::move(shape);
        s_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor filled(Shape shape, double value) {
        auto n = checked_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value) { return Tensor({1, 1}, {value}); }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t size() const { return s_->data.size(); }

    // Rank-2 view used by every op: leading dimension by everything else.
    std::size_t rows() const { return s_->shape.empty() ? 1 : s_->shape[0]; }
    std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

    std::span<double> data() { return s_->data; }
    std::span<const double> data() const { return s_->data; }
    double* ptr() { return s_->data.data(); }
    const double* ptr() const { return s_->data.data(); }

    double& at(std::size_t r, std::size_t c) { return s_->data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return s_->data[0];
    }

    bool requires_grad() const { return s_ && s_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        s_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return s_ && !s_->grad.empty(); }

    // Allocates a zeroed buffer on first access. The buffer lives in the
    // shared storage, so it is reachable through const handles.
    std::span<double> grad() const {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
        return s_->grad;
    }
    double* grad_ptr() const { return grad().data(); }

    void zero_grad() const {
        if (s_) s_->grad.clear();
    }

    Tensor clone() const { return Tensor(shape(), s_->data); }

    Tensor reshaped(Shape shape) const {
        if (checked_size(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), s_->data);
    }

    bool same_storage(const Tensor& other) const { return s_ == other.s_; }

private:
    static std::size_t checked_size(const Shape& shape) {
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str(shape));
        }
        return shape_size(shape);
    }

    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> s_;
};

// Reverse-mode tape. Ops append their backward closure while a GradRecorder
// is active; backward() replays them newest-first, which is a valid
// topological order because ops are recorded in evaluation order.
class Tape {
public:
    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    void backward(Tensor loss) {
        if (loss.size() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        loss.grad()[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}  // namespace detail

// Scopes gradient recording to one training step.
class GradRecorder {
public:
    explicit GradRecorder(Tape& tape) : prev_(detail::active_tape) { detail::active_tape = &tape; }
    ~GradRecorder() { detail::active_tape = prev_; }
    GradRecorder(const GradRecorder&) = delete;
    GradRecorder& operator=(const GradRecorder&) = delete;

private:
    Tape* prev_;
};

inline bool is_recording() { return detail::active_tape != nullptr; }

namespace detail {

// The tape to record on when at least one input wants a gradient, else null.
inline Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape) return nullptr;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return active_tape;
    }
    return nullptr;
}

inline Tape* tape_for(const std::vector<Tensor>& inputs) {
    if (!active_tape) return nullptr;
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) return active_tape;
    }
    return nullptr;
}

}  // namespace detail

}  // namespace adstruct::nn
