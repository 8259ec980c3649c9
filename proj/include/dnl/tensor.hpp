#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dnl/errors.hpp"

namespace dnl {

#ifdef DNL_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major tensor with an optional gradient slot.
//
// A Tensor is a shared handle: copies alias the same buffer. Values produced by
// ops are never mutated afterwards; leaves (parameters) are updated in place by
// the optimizer through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const Scalar> data() const;
    std::span<Scalar> mutable_data();
    Scalar item() const;
    Scalar at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const Scalar> grad() const;
    void zero_grad();

    // Reverse-mode sweep from this scalar. Gradients accumulate into every leaf
    // that requires them.
    void backward() const;

    // Copy of the values with no graph attached.
    Tensor detach() const;

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace autograd {

// Called during backward with the output gradient; writes into input gradients
// obtained via grad_slot().
using BackwardFn = std::function<void(std::span<const Scalar> grad_out)>;

// Wraps freshly computed values as an op result. Records the backward closure
// only when recording is enabled and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<Scalar> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

// Gradient buffer of t, allocated on first use; nullptr when t needs no gradient.
Scalar* grad_slot(const Tensor& t);

}  // namespace autograd

}  // namespace dnl
