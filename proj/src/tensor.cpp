#include "dnl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace dnl {

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    autograd::BackwardFn backward;

    bool is_leaf() const { return !backward; }
};

}  // namespace detail

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<Scalar> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return impl;
}

const TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl) {
    if (!impl) throw UsageError("operation on an undefined tensor");
    return *impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<Scalar>(n, Scalar{0}), requires_grad));
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<Scalar>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
    return Tensor(new_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
    return Tensor(new_impl(Shape{1}, std::vector<Scalar>{value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const Scalar> Tensor::data() const { return checked(impl_).data; }

std::span<Scalar> Tensor::mutable_data() {
    checked(impl_);
    return impl_->data;
}

Scalar Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Scalar Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    checked(impl_);
    if (!impl_->is_leaf()) throw UsageError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const Scalar> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::zero_grad() {
    checked(impl_);
    impl_->grad.clear();
}

Tensor Tensor::detach() const {
    const auto& impl = checked(impl_);
    return Tensor(new_impl(impl.shape, impl.data, false));
}

void Tensor::backward() const {
    const auto& root = checked(impl_);
    if (root.data.size() != 1) {
        throw UsageError("backward() requires a scalar root, got " + shape_str(root.shape));
    }
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order of the recorded graph.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    if (impl_->grad.empty()) impl_->grad.assign(1, Scalar{0});
    impl_->grad[0] += Scalar{1};

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->is_leaf() || node->grad.empty()) continue;
        node->backward(node->grad);
        // Interior gradients are consumed exactly once.
        std::vector<Scalar>().swap(node->grad);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace autograd {

Tensor make_result(Shape shape, std::vector<Scalar> values, std::vector<Tensor> inputs,
                   BackwardFn backward) {
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
    }
    auto impl = new_impl(std::move(shape), std::move(values), needs);
    if (needs) {
        impl->parents.reserve(inputs.size());
        for (const auto& in : inputs) {
            if (in.defined()) impl->parents.push_back(in.impl());
        }
        impl->backward = std::move(backward);
    }
    return Tensor(std::move(impl));
}

Scalar* grad_slot(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    auto& impl = *t.impl();
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), Scalar{0});
    return impl.grad.data();
}

}  // namespace autograd

}  // namespace dnl
