#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rotpretext/common.hpp"

namespace rotpretext {

namespace detail {

template <class T>
struct TensorStorage {
    std::vector<int> shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until first touched
    bool requires_grad = false;
};

}  // namespace detail

/// Dense N-dimensional array, row-major (last index fastest). Copies are
/// shallow handles onto shared storage; clone() deep-copies the values.
template <class T>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(std::shared_ptr<detail::TensorStorage<T>> s) : s_(std::move(s)) {}

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorT full(std::vector<int> shape, T value, bool requires_grad = false);
    static TensorT from_values(std::vector<int> shape, std::vector<T> values,
                               bool requires_grad = false);
    static TensorT scalar(T value, bool requires_grad = false);
    static TensorT uniform(std::vector<int> shape, T lo, T hi, Rng& rng,
                           bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const std::vector<int>& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int extent(int axis) const { return s_->shape[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return s_->values.size(); }

    std::span<T> values() { return s_->values; }
    std::span<const T> values() const { return s_->values; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool rg);

    /// Grad buffer, allocated (zeroed) on first access.
    std::span<T> grad();
    /// Read-only view; empty span if the buffer was never touched.
    std::span<const T> grad_view() const;
    bool has_grad() const { return !s_->grad.empty(); }
    void zero_grad();

    T item() const;

    TensorT clone() const;

    std::shared_ptr<detail::TensorStorage<T>> storage() const { return s_; }

private:
    std::shared_ptr<detail::TensorStorage<T>> s_;
};

/// Ordered record of differentiable operations. Ops append their backward
/// rules as they execute, so the list is topologically ordered by
/// construction; backward() replays it once, in reverse. Single-owner, not
/// shareable across threads.
template <class T>
class TapeT {
public:
    void record(std::function<void()> backward_rule) {
        nodes_.push_back(std::move(backward_rule));
    }
    std::size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void replay_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
/// into the grad buffer of every requires_grad tensor reachable from loss.
/// Throws ShapeError if loss is not a scalar.
template <class T>
void backward(const TensorT<T>& loss, TapeT<T>& tape);

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

std::size_t element_count(const std::vector<int>& shape);

bool all_finite(std::span<const float> v);
bool all_finite(std::span<const double> v);

}  // namespace rotpretext
