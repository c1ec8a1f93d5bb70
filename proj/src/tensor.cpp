#include "rotpretext/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

namespace rotpretext {

namespace {
int g_num_threads = 1;
}

void set_num_threads(int n) { g_num_threads = n < 1 ? 1 : n; }
int num_threads() { return g_num_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const int workers = g_num_threads;
    if (workers <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    const std::size_t step = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * step;
        const std::size_t hi = std::min(n, lo + step);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_to_string(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

template <class T>
TensorT<T> TensorT<T>::zeros(std::vector<int> shape, bool requires_grad) {
    auto s = std::make_shared<detail::TensorStorage<T>>();
    const std::size_t n = element_count(shape);
    s->shape = std::move(shape);
    s->values.assign(n, T(0));
    s->requires_grad = requires_grad;
    return TensorT(std::move(s));
}

template <class T>
TensorT<T> TensorT<T>::full(std::vector<int> shape, T value, bool requires_grad) {
    TensorT t = zeros(std::move(shape), requires_grad);
    std::fill(t.s_->values.begin(), t.s_->values.end(), value);
    return t;
}

template <class T>
TensorT<T> TensorT<T>::from_values(std::vector<int> shape, std::vector<T> values,
                                   bool requires_grad) {
    const std::size_t n = element_count(shape);
    if (values.size() != n) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    auto s = std::make_shared<detail::TensorStorage<T>>();
    s->shape = std::move(shape);
    s->values = std::move(values);
    s->requires_grad = requires_grad;
    return TensorT(std::move(s));
}

template <class T>
TensorT<T> TensorT<T>::scalar(T value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

template <class T>
TensorT<T> TensorT<T>::uniform(std::vector<int> shape, T lo, T hi, Rng& rng,
                               bool requires_grad) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.s_->values) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T>
void TensorT<T>::set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    if (!rg) s_->grad.clear();
}

template <class T>
std::span<T> TensorT<T>::grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
}

template <class T>
std::span<const T> TensorT<T>::grad_view() const {
    return s_->grad;
}

template <class T>
void TensorT<T>::zero_grad() {
    std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <class T>
T TensorT<T>::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape()));
    return s_->values[0];
}

template <class T>
TensorT<T> TensorT<T>::clone() const {
    return from_values(s_->shape, s_->values, s_->requires_grad);
}

template <class T>
void backward(const TensorT<T>& loss, TapeT<T>& tape) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward requires a scalar loss");
    }
    loss.storage()->grad.resize(1, T(0));
    loss.storage()->grad[0] += T(1);
    tape.replay_backward();
}

template class TensorT<float>;
template class TensorT<double>;
template void backward<float>(const TensorT<float>&, TapeT<float>&);
template void backward<double>(const TensorT<double>&, TapeT<double>&);

}  // namespace rotpretext
