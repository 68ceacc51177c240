// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sg2m/errors.hpp"
#include "sg2m/rng.hpp"

namespace sg2m {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

class Tensor;

namespace detail {

struct Node {
    const char* name = "";
    std::vector<Tensor> inputs;
    // Maps the gradient of this node's output to one gradient per input.
    // Undefined entries mean "no gradient for this input".
    std::function<std::vector<Tensor>(const Tensor&)> backward;
};

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<float>> storage;
    std::shared_ptr<Node> node;
    bool leaf_requires_grad = false;
    std::uint64_t seq = 0;
};

inline std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool& finite_check_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// True while operations record into the differentiation graph.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for its lifetime (restores the previous mode).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled) : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = enabled; }
    ~GradModeGuard() { detail::grad_mode_flag() = prev_; }
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool prev_;
};

/// Dense row-major f32 array. Immutable once created; reshapes share storage.
/// A tensor either is a constant, a leaf that requires gradients, or the
/// output of a recorded operation.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<float> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->storage = std::make_shared<std::vector<float>>(std::move(data));
        impl->seq = detail::next_seq();
        return Tensor(std::move(impl));
    }
    static Tensor full(Shape shape, float v) {
        const std::size_t n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<float>(n, v));
    }
    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0f); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0f); }
    static Tensor scalar(float v) { return from_data({}, {v}); }
    static Tensor randn(Shape shape, Rng& rng) {
        std::vector<float> d(shape_numel(shape));
        for (auto& x : d) x = rng.normalf();
        return from_data(std::move(shape), std::move(d));
    }
    static Tensor uniform(Shape shape, Rng& rng, float lo, float hi) {
        std::vector<float> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<float>(rng.uniform(lo, hi));
        return from_data(std::move(shape), std::move(d));
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
    std::size_t numel() const { return impl_->storage->size(); }
    std::span<const float> data() const { return {impl_->storage->data(), impl_->storage->size()}; }
    std::vector<float> to_vector() const { return *impl_->storage; }
    float operator[](std::size_t i) const { return (*impl_->storage)[i]; }
    float item() const {
        if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
        return (*impl_->storage)[0];
    }

    bool requires_grad() const { return impl_ && (impl_->leaf_requires_grad || impl_->node); }
    bool is_leaf() const { return !impl_->node; }
    const char* op_name() const { return impl_->node ? impl_->node->name : "leaf"; }

    /// Same values, no graph history.
    Tensor detach() const {
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = impl_->shape;
        impl->storage = impl_->storage;
        impl->seq = detail::next_seq();
        return Tensor(std::move(impl));
    }
    /// Same values as a fresh leaf that gradients are taken with respect to.
    Tensor variable() const {
        Tensor t = detach();
        t.impl_->leaf_requires_grad = true;
        return t;
    }

    const detail::TensorImpl* id() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Enables/disables the post-operation NaN/Inf scan on this thread.
class FiniteCheckGuard {
public:
    explicit FiniteCheckGuard(bool enabled) : prev_(detail::finite_check_flag()) {
        detail::finite_check_flag() = enabled;
    }
    ~FiniteCheckGuard() { detail::finite_check_flag() = prev_; }
    FiniteCheckGuard(const FiniteCheckGuard&) = delete;
    FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<float>& d) {
    if (!finite_check_flag()) return;
    bool ok = true;
    for (float v : d) ok &= std::isfinite(v);
    if (!ok) throw NumericError(std::string("non-finite value produced by ") + op);
}

using BackwardFn = std::function<std::vector<Tensor>(const Tensor&)>;

/// Wraps an op result; records a graph node when grad mode is on and any input
/// requires gradients.
inline Tensor make_result(const char* op, Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                          BackwardFn backward) {
    check_finite(op, data);
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    if (grad_enabled()) {
        bool any = false;
        for (const auto& t : inputs) any |= t.requires_grad();
        if (any) {
            auto node = std::make_shared<Node>();
            node->name = op;
            node->inputs = std::move(inputs);
            node->backward = std::move(backward);
            out.impl()->node = std::move(node);
        }
    }
    return out;
}

/// Result sharing the storage of `src` (reshape).
inline Tensor make_view(const char* op, const Tensor& src, Shape shape, BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->storage = src.impl()->storage;
    impl->seq = next_seq();
    Tensor out(std::move(impl));
    if (grad_enabled() && src.requires_grad()) {
        auto node = std::make_shared<Node>();
        node->name = op;
        node->inputs = {src};
        node->backward = std::move(backward);
        out.impl()->node = std::move(node);
    }
    return out;
}

}  // namespace detail

}  // namespace sg2m
