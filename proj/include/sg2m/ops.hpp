// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives. Every backward rule is written in terms of these
// same primitives, so gradients returned with create_graph=true can be
// differentiated again.

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "sg2m/errors.hpp"
#include "sg2m/parallel.hpp"
#include "sg2m/tensor.hpp"

namespace sg2m {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Tensor sum_to(const Tensor& a, const Shape& shape);
inline Tensor broadcast_to(const Tensor& a, const Shape& shape);
inline Tensor reshape(const Tensor& a, Shape shape);
inline Tensor scale(const Tensor& a, float s);
inline Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor neg(const Tensor& a);
inline Tensor conv2d(const Tensor& x, const Tensor& w, int groups = 1);

namespace detail {

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = da == 1 ? db : da;
    }
    return out;
}

// Element strides of `in` when viewed at the rank of `out` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size(), off = r - in.size();
    std::vector<std::size_t> st(r, 0);
    std::size_t s = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
        if (in[d] != 1) st[d + off] = s;
        s *= static_cast<std::size_t>(in[d]);
    }
    return st;
}

// Visits every element of `out` in row-major order, passing the flat offsets
// of the corresponding broadcast elements of two operands.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
    const std::size_t n = shape_numel(out);
    if (n == 0) return;
    if (out.empty()) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t r = out.size();
    const std::size_t inner = static_cast<std::size_t>(out[r - 1]);
    const std::size_t ia = sa[r - 1], ib = sb[r - 1];
    std::vector<int> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t base = 0; base < n; base += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
        for (std::size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * static_cast<std::size_t>(out[d]);
            ob -= sb[d] * static_cast<std::size_t>(out[d]);
            idx[d] = 0;
        }
    }
}

template <class F>
std::vector<float> binary_kernel(const Tensor& a, const Tensor& b, const Shape& out, F f) {
    const std::size_t n = shape_numel(out);
    std::vector<float> r(n);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    if (a.shape() == out && b.shape() == out) {
        for (std::size_t i = 0; i < n; ++i) r[i] = f(pa[i], pb[i]);
    } else if (a.shape() == out && b.numel() == 1) {
        const float vb = pb[0];
        for (std::size_t i = 0; i < n; ++i) r[i] = f(pa[i], vb);
    } else if (b.shape() == out && a.numel() == 1) {
        const float va = pa[0];
        for (std::size_t i = 0; i < n; ++i) r[i] = f(va, pb[i]);
    } else {
        for_each_broadcast(out, broadcast_strides(a.shape(), out), broadcast_strides(b.shape(), out),
                           [&](std::size_t o, std::size_t ia, std::size_t ib) { r[o] = f(pa[ia], pb[ib]); });
    }
    return r;
}

template <class F>
std::vector<float> unary_kernel(const Tensor& a, F f) {
    std::vector<float> r(a.numel());
    const float* p = a.data().data();
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = f(p[i]);
    return r;
}

inline int norm_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
    return a;
}

// Fixed-order pairwise reduction over 256-element chunks.
inline float tree_sum(const float* p, std::size_t n) {
    constexpr std::size_t chunk = 256;
    if (n <= chunk) {
        float s = 0.0f;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        return s;
    }
    const std::size_t chunks = (n + chunk - 1) / chunk;
    const std::size_t half = (chunks / 2) * chunk;
    return tree_sum(p, half) + tree_sum(p + half, n - half);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "add");
    auto data = detail::binary_kernel(a, b, out, [](float x, float y) { return x + y; });
    return detail::make_result("add", out, std::move(data), {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{a.requires_grad() ? sum_to(g, a.shape()) : Tensor(),
                                   b.requires_grad() ? sum_to(g, b.shape()) : Tensor()};
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "sub");
    auto data = detail::binary_kernel(a, b, out, [](float x, float y) { return x - y; });
    return detail::make_result("sub", out, std::move(data), {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{a.requires_grad() ? sum_to(g, a.shape()) : Tensor(),
                                   b.requires_grad() ? neg(sum_to(g, b.shape())) : Tensor()};
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Shape out = detail::broadcast_shapes(a.shape(), b.shape(), "mul");
    auto data = detail::binary_kernel(a, b, out, [](float x, float y) { return x * y; });
    return detail::make_result("mul", out, std::move(data), {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{a.requires_grad() ? sum_to(mul(g, b), a.shape()) : Tensor(),
                                   b.requires_grad() ? sum_to(mul(g, a), b.shape()) : Tensor()};
    });
}

inline Tensor scale(const Tensor& a, float s) {
    auto data = detail::unary_kernel(a, [s](float x) { return x * s; });
    return detail::make_result("scale", a.shape(), std::move(data), {a},
                               [s](const Tensor& g) { return std::vector<Tensor>{scale(g, s)}; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

inline Tensor add_scalar(const Tensor& a, float s) {
    auto data = detail::unary_kernel(a, [s](float x) { return x + s; });
    return detail::make_result("add_scalar", a.shape(), std::move(data), {a},
                               [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

inline Tensor square(const Tensor& a) {
    auto data = detail::unary_kernel(a, [](float x) { return x * x; });
    return detail::make_result("square", a.shape(), std::move(data), {a},
                               [a](const Tensor& g) { return std::vector<Tensor>{mul(g, scale(a, 2.0f))}; });
}

/// 1/x for x != 0, and 0 where x == 0.
inline Tensor safe_recip(const Tensor& a) {
    auto data = detail::unary_kernel(a, [](float x) { return x != 0.0f ? 1.0f / x : 0.0f; });
    return detail::make_result("safe_recip", a.shape(), std::move(data), {a}, [a](const Tensor& g) {
        return std::vector<Tensor>{mul(g, neg(square(safe_recip(a))))};
    });
}

/// sqrt(max(x, 0)); the derivative is taken as 0 where the result is 0.
inline Tensor sqrt(const Tensor& a) {
    auto data = detail::unary_kernel(a, [](float x) { return x > 0.0f ? std::sqrt(x) : 0.0f; });
    return detail::make_result("sqrt", a.shape(), std::move(data), {a}, [a](const Tensor& g) {
        return std::vector<Tensor>{mul(g, scale(safe_recip(sqrt(a)), 0.5f))};
    });
}

/// 1/sqrt(x); requires x > 0.
inline Tensor rsqrt(const Tensor& a) {
    for (float x : a.data())
        if (!(x > 0.0f)) throw NumericError("rsqrt: non-positive input");
    auto data = detail::unary_kernel(a, [](float x) { return 1.0f / std::sqrt(x); });
    return detail::make_result("rsqrt", a.shape(), std::move(data), {a}, [a](const Tensor& g) {
        Tensor r = rsqrt(a);
        return std::vector<Tensor>{mul(g, scale(mul(r, square(r)), -0.5f))};
    });
}

inline Tensor sigmoid(const Tensor& a) {
    auto data = detail::unary_kernel(a, [](float x) {
        return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
    });
    return detail::make_result("sigmoid", a.shape(), std::move(data), {a}, [a](const Tensor& g) {
        Tensor s = sigmoid(a);
        return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), 1.0f)))};
    });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
    auto data = detail::unary_kernel(
        a, [](float x) { return x > 0.0f ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
    return detail::make_result("softplus", a.shape(), std::move(data), {a},
                               [a](const Tensor& g) { return std::vector<Tensor>{mul(g, sigmoid(a))}; });
}

/// Variance-preserving gain of the leaky ReLU with negative slope alpha.
inline float leaky_relu_gain(float alpha) { return std::sqrt(2.0f / (1.0f + alpha * alpha)); }

/// max(x, alpha*x) * sqrt(2/(1+alpha^2)).
inline Tensor leaky_relu_scaled(const Tensor& a, float alpha = 0.2f) {
    if (!(alpha > 0.0f && alpha < 1.0f)) throw ShapeError("leaky_relu_scaled: alpha must lie in (0,1)");
    const float gain = leaky_relu_gain(alpha);
    auto data = detail::unary_kernel(a, [=](float x) { return (x > 0.0f ? x : alpha * x) * gain; });
    return detail::make_result("leaky_relu_scaled", a.shape(), std::move(data), {a}, [a, alpha, gain](const Tensor& g) {
        // The slope is piecewise constant, so it enters the backward as a constant.
        auto slope = detail::unary_kernel(a, [=](float x) { return x > 0.0f ? gain : alpha * gain; });
        return std::vector<Tensor>{mul(g, Tensor::from_data(a.shape(), std::move(slope)))};
    });
}

inline Tensor lerp(const Tensor& a, const Tensor& b, float t) { return add(a, scale(sub(b, a), t)); }

// ---------------------------------------------------------------------------
// Shape manipulation and reductions
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    // A single -1 extent is inferred.
    std::size_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
            infer = static_cast<int>(i);
        } else {
            known *= static_cast<std::size_t>(shape[i]);
        }
    }
    if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = static_cast<int>(a.numel() / known);
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    if (shape == a.shape()) return a;
    Shape from = a.shape();
    return detail::make_view("reshape", a, std::move(shape),
                             [from](const Tensor& g) { return std::vector<Tensor>{reshape(g, from)}; });
}

/// Reduces `a` by summation so that it has `shape` (the inverse of broadcasting).
inline Tensor sum_to(const Tensor& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    if (shape.size() > a.shape().size()) throw ShapeError("sum_to: target rank exceeds input rank");
    Shape padded(a.shape().size() - shape.size(), 1);
    padded.insert(padded.end(), shape.begin(), shape.end());
    if (detail::broadcast_shapes(padded, a.shape(), "sum_to") != a.shape())
        throw ShapeError("sum_to: " + shape_str(shape) + " does not broadcast to " + shape_str(a.shape()));
    std::vector<float> out(shape_numel(shape), 0.0f);
    const float* p = a.data().data();
    if (shape_numel(shape) == 1) {
        out[0] = detail::tree_sum(p, a.numel());
    } else {
        const auto so = detail::broadcast_strides(padded, a.shape());
        const std::vector<std::size_t> zero(a.shape().size(), 0);
        detail::for_each_broadcast(a.shape(), so, zero,
                                   [&](std::size_t i, std::size_t o, std::size_t) { out[o] += p[i]; });
    }
    Shape from = a.shape();
    return detail::make_result("sum_to", shape, std::move(out), {a},
                               [from](const Tensor& g) { return std::vector<Tensor>{broadcast_to(g, from)}; });
}

inline Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    if (detail::broadcast_shapes(a.shape(), shape, "broadcast_to") != shape)
        throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " does not broadcast to " + shape_str(shape));
    std::vector<float> out(shape_numel(shape));
    const float* p = a.data().data();
    const std::vector<std::size_t> zero(shape.size(), 0);
    detail::for_each_broadcast(shape, detail::broadcast_strides(a.shape(), shape), zero,
                               [&](std::size_t o, std::size_t i, std::size_t) { out[o] = p[i]; });
    Shape from = a.shape();
    return detail::make_result("broadcast_to", shape, std::move(out), {a},
                               [from](const Tensor& g) { return std::vector<Tensor>{sum_to(g, from)}; });
}

/// Sum of all elements (rank-0 result).
inline Tensor sum(const Tensor& a) { return reshape(sum_to(a, Shape(a.rank(), 1)), {}); }

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0f / static_cast<float>(a.numel())); }

/// Sum over the listed axes.
inline Tensor sum(const Tensor& a, const std::vector<int>& axes, bool keepdim = false) {
    Shape kept = a.shape();
    for (int ax : axes) kept[static_cast<std::size_t>(detail::norm_axis(ax, a.rank(), "sum"))] = 1;
    Tensor r = sum_to(a, kept);
    if (keepdim) return r;
    Shape squeezed;
    std::vector<bool> drop(a.shape().size(), false);
    for (int ax : axes) drop[static_cast<std::size_t>(detail::norm_axis(ax, a.rank(), "sum"))] = true;
    for (std::size_t i = 0; i < kept.size(); ++i)
        if (!drop[i]) squeezed.push_back(kept[i]);
    return reshape(r, squeezed);
}

inline Tensor mean(const Tensor& a, const std::vector<int>& axes, bool keepdim = false) {
    std::size_t count = 1;
    for (int ax : axes) count *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(detail::norm_axis(ax, a.rank(), "mean"))]);
    return scale(sum(a, axes, keepdim), 1.0f / static_cast<float>(count));
}

/// Copies `len` entries starting at `start` along `axis`.
inline Tensor slice(const Tensor& a, int axis, int start, int len);

/// Places `a` at offset `start` along `axis` of a zero tensor with extent `full` on that axis.
inline Tensor embed(const Tensor& a, int axis, int start, int full) {
    const int ax = detail::norm_axis(axis, a.rank(), "embed");
    const int n = a.shape()[static_cast<std::size_t>(ax)];
    if (start < 0 || start + n > full) throw ShapeError("embed: range out of bounds");
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(ax)] = full;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    for (int i = ax + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    std::vector<float> out(shape_numel(out_shape), 0.0f);
    const float* p = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + (o * static_cast<std::size_t>(full) + static_cast<std::size_t>(start)) * inner,
                    p + o * static_cast<std::size_t>(n) * inner, static_cast<std::size_t>(n) * inner * sizeof(float));
    return detail::make_result("embed", out_shape, std::move(out), {a}, [ax, start, n](const Tensor& g) {
        return std::vector<Tensor>{slice(g, ax, start, n)};
    });
}

inline Tensor slice(const Tensor& a, int axis, int start, int len) {
    const int ax = detail::norm_axis(axis, a.rank(), "slice");
    const int full = a.shape()[static_cast<std::size_t>(ax)];
    if (start < 0 || len < 0 || start + len > full) throw ShapeError("slice: range out of bounds");
    if (start == 0 && len == full) return a;
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(ax)] = len;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    for (int i = ax + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    std::vector<float> out(shape_numel(out_shape));
    const float* p = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * static_cast<std::size_t>(len) * inner,
                    p + (o * static_cast<std::size_t>(full) + static_cast<std::size_t>(start)) * inner,
                    static_cast<std::size_t>(len) * inner * sizeof(float));
    return detail::make_result("slice", out_shape, std::move(out), {a}, [ax, start, full](const Tensor& g) {
        return std::vector<Tensor>{embed(g, ax, start, full)};
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int ax = detail::norm_axis(axis, parts[0].rank(), "concat");
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const auto& t : parts) {
        Shape s = t.shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
        total += s[static_cast<std::size_t>(ax)];
        s[static_cast<std::size_t>(ax)] = out_shape[static_cast<std::size_t>(ax)];
        if (s != out_shape) throw ShapeError("concat: shape mismatch off the concatenation axis");
    }
    out_shape[static_cast<std::size_t>(ax)] = total;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < out_shape.size(); ++i)
        inner *= static_cast<std::size_t>(out_shape[i]);
    std::vector<float> out(shape_numel(out_shape));
    std::vector<int> starts;
    int offset = 0;
    for (const auto& t : parts) {
        const auto n = static_cast<std::size_t>(t.shape()[static_cast<std::size_t>(ax)]);
        const float* p = t.data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * static_cast<std::size_t>(total) + static_cast<std::size_t>(offset)) * inner,
                        p + o * n * inner, n * inner * sizeof(float));
        starts.push_back(offset);
        offset += static_cast<int>(n);
    }
    std::vector<int> lens;
    for (const auto& t : parts) lens.push_back(t.shape()[static_cast<std::size_t>(ax)]);
    return detail::make_result("concat", out_shape, std::move(out), parts, [ax, starts, lens](const Tensor& g) {
        std::vector<Tensor> gs;
        for (std::size_t i = 0; i < starts.size(); ++i) gs.push_back(slice(g, ax, starts[i], lens[i]));
        return gs;
    });
}

/// Cyclic shift: out[i] = a[(i - shift) mod n] along `axis`.
inline Tensor roll(const Tensor& a, int shift, int axis) {
    const int ax = detail::norm_axis(axis, a.rank(), "roll");
    const int n = a.shape()[static_cast<std::size_t>(ax)];
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    for (int i = ax + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    const int s = ((shift % n) + n) % n;
    std::vector<float> out(a.numel());
    const float* p = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (int i = 0; i < n; ++i) {
            const int src = (i - s + n) % n;
            std::memcpy(out.data() + (o * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)) * inner,
                        p + (o * static_cast<std::size_t>(n) + static_cast<std::size_t>(src)) * inner,
                        inner * sizeof(float));
        }
    return detail::make_result("roll", a.shape(), std::move(out), {a},
                               [shift, ax](const Tensor& g) { return std::vector<Tensor>{roll(g, -shift, ax)}; });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expects a matrix, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    std::vector<float> out(a.numel());
    Eigen::Map<RowMatrix>(out.data(), n, m) = Eigen::Map<const RowMatrix>(a.data().data(), m, n).transpose();
    return detail::make_result("transpose", {n, m}, std::move(out), {a},
                               [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

/// [M,K] x [K,N] -> [M,N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<float> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
    Eigen::Map<RowMatrix>(out.data(), m, n).noalias() =
        Eigen::Map<const RowMatrix>(a.data().data(), m, k) * Eigen::Map<const RowMatrix>(b.data().data(), k, n);
    return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b](const Tensor& g) {
        return std::vector<Tensor>{a.requires_grad() ? matmul(g, transpose(b)) : Tensor(),
                                   b.requires_grad() ? matmul(transpose(a), g) : Tensor()};
    });
}

// ---------------------------------------------------------------------------
// Convolution (stride 1, odd square kernels, zero "same" padding, groups)
// ---------------------------------------------------------------------------

namespace detail {

// Unfolds C channels of an HxW image into a (C*k*k) x (H*W) matrix.
inline void im2col(const float* x, int channels, int h, int w, int k, float* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* row = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * hw;
                const float* src = x + static_cast<std::size_t>(c) * hw;
                for (int y = 0; y < h; ++y) {
                    const int iy = y + ky - pad;
                    float* dst = row + static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
                    if (iy < 0 || iy >= h) {
                        std::memset(dst, 0, static_cast<std::size_t>(w) * sizeof(float));
                        continue;
                    }
                    const float* s = src + static_cast<std::size_t>(iy) * static_cast<std::size_t>(w);
                    const int dx = kx - pad;
                    const int lo = std::max(0, -dx), hi = std::min(w, w - dx);
                    for (int xo = 0; xo < lo; ++xo) dst[xo] = 0.0f;
                    for (int xo = lo; xo < hi; ++xo) dst[xo] = s[xo + dx];
                    for (int xo = std::max(hi, lo); xo < w; ++xo) dst[xo] = 0.0f;
                }
            }
}

struct ConvGeometry {
    int n, cin, h, w, cout, k, groups, cin_g, cout_g;
};

inline ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, int groups, const char* op) {
    if (xs.size() != 4 || ws.size() != 4)
        throw ShapeError(std::string(op) + ": expects NCHW input and OIKK weights, got " + shape_str(xs) + " and " +
                         shape_str(ws));
    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], groups, 0, 0};
    if (groups < 1 || g.cin % groups != 0 || g.cout % groups != 0)
        throw ShapeError(std::string(op) + ": groups=" + std::to_string(groups) + " does not divide channel counts");
    g.cin_g = g.cin / groups;
    g.cout_g = g.cout / groups;
    if (ws[1] != g.cin_g)
        throw ShapeError(std::string(op) + ": weight input channels " + std::to_string(ws[1]) + " != " +
                         std::to_string(g.cin_g));
    if (ws[2] != ws[3] || ws[2] % 2 == 0) throw ShapeError(std::string(op) + ": kernel must be square and odd");
    return g;
}

inline std::vector<float>& scratch() {
    thread_local std::vector<float> buf;
    return buf;
}

}  // namespace detail

inline Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, int groups, int k);

/// Rearranges grouped weights [Cout, Cin/g, k, k] into [Cin, Cout/g, k, k] with
/// the kernel flipped spatially: the weights of the adjoint convolution.
/// Applying it twice is the identity.
inline Tensor conv_adjoint_weights(const Tensor& w, int groups) {
    if (w.rank() != 4) throw ShapeError("conv_adjoint_weights: expects OIKK weights");
    const int cout = w.dim(0), cin_g = w.dim(1), k = w.dim(2);
    if (cout % groups != 0) throw ShapeError("conv_adjoint_weights: groups do not divide output channels");
    const int cout_g = cout / groups;
    const int cin = cin_g * groups;
    std::vector<float> out(w.numel());
    const float* p = w.data().data();
    const std::size_t kk = static_cast<std::size_t>(k) * static_cast<std::size_t>(k);
    for (int g = 0; g < groups; ++g)
        for (int o = 0; o < cout_g; ++o)
            for (int i = 0; i < cin_g; ++i) {
                const float* src = p + (static_cast<std::size_t>(g * cout_g + o) * cin_g + i) * kk;
                float* dst = out.data() + (static_cast<std::size_t>(g * cin_g + i) * cout_g + o) * kk;
                for (std::size_t t = 0; t < kk; ++t) dst[t] = src[kk - 1 - t];
            }
    return detail::make_result("conv_adjoint_weights", {cin, cout_g, k, k}, std::move(out), {w}, [groups](const Tensor& g) {
        return std::vector<Tensor>{conv_adjoint_weights(g, groups)};
    });
}

/// Grouped 2D cross-correlation with stride 1 and zero "same" padding.
/// x: [N, Cin, H, W], w: [Cout, Cin/groups, k, k] -> [N, Cout, H, W].
inline Tensor conv2d(const Tensor& x, const Tensor& w, int groups) {
    const auto g = detail::conv_geometry(x.shape(), w.shape(), groups, "conv2d");
    const std::size_t hw = static_cast<std::size_t>(g.h) * static_cast<std::size_t>(g.w);
    const std::size_t kdim = static_cast<std::size_t>(g.cin_g) * static_cast<std::size_t>(g.k * g.k);
    std::vector<float> out(static_cast<std::size_t>(g.n) * static_cast<std::size_t>(g.cout) * hw);
    const float* px = x.data().data();
    const float* pw = w.data().data();
    parallel_for(static_cast<std::size_t>(g.n) * static_cast<std::size_t>(groups), [&](std::size_t b, std::size_t e) {
        for (std::size_t task = b; task < e; ++task) {
            const std::size_t n = task / static_cast<std::size_t>(groups);
            const std::size_t gi = task % static_cast<std::size_t>(groups);
            const float* xin = px + (n * static_cast<std::size_t>(g.cin) + gi * static_cast<std::size_t>(g.cin_g)) * hw;
            const float* col = xin;
            if (g.k > 1) {
                auto& buf = detail::scratch();
                buf.resize(kdim * hw);
                detail::im2col(xin, g.cin_g, g.h, g.w, g.k, buf.data());
                col = buf.data();
            }
            Eigen::Map<const RowMatrix> wm(pw + gi * static_cast<std::size_t>(g.cout_g) * kdim, g.cout_g,
                                           static_cast<Eigen::Index>(kdim));
            Eigen::Map<const RowMatrix> cm(col, static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(hw));
            Eigen::Map<RowMatrix> ym(
                out.data() + (n * static_cast<std::size_t>(g.cout) + gi * static_cast<std::size_t>(g.cout_g)) * hw,
                g.cout_g, static_cast<Eigen::Index>(hw));
            ym.noalias() = wm * cm;
        }
    });
    const int k = g.k;
    return detail::make_result("conv2d", {g.n, g.cout, g.h, g.w}, std::move(out), {x, w},
                               [x, w, groups, k](const Tensor& dy) {
                                   return std::vector<Tensor>{
                                       x.requires_grad() ? conv2d(dy, conv_adjoint_weights(w, groups), groups) : Tensor(),
                                       w.requires_grad() ? conv2d_weight_grad(x, dy, groups, k) : Tensor()};
                               });
}

/// Gradient of conv2d with respect to its weights: [Cout, Cin/groups, k, k].
inline Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, int groups, int k) {
    if (x.rank() != 4 || dy.rank() != 4 || x.dim(0) != dy.dim(0) || x.dim(2) != dy.dim(2) || x.dim(3) != dy.dim(3))
        throw ShapeError("conv2d_weight_grad: incompatible shapes");
    const Shape wshape{dy.dim(1), x.dim(1) / groups, k, k};
    const auto g = detail::conv_geometry(x.shape(), wshape, groups, "conv2d_weight_grad");
    const std::size_t hw = static_cast<std::size_t>(g.h) * static_cast<std::size_t>(g.w);
    const std::size_t kdim = static_cast<std::size_t>(g.cin_g) * static_cast<std::size_t>(k * k);
    std::vector<float> out(shape_numel(wshape), 0.0f);
    const float* px = x.data().data();
    const float* pd = dy.data().data();
    parallel_for(static_cast<std::size_t>(groups), [&](std::size_t b, std::size_t e) {
        for (std::size_t gi = b; gi < e; ++gi) {
            Eigen::Map<RowMatrix> dw(out.data() + gi * static_cast<std::size_t>(g.cout_g) * kdim, g.cout_g,
                                     static_cast<Eigen::Index>(kdim));
            for (int n = 0; n < g.n; ++n) {
                const std::size_t nn = static_cast<std::size_t>(n);
                const float* xin = px + (nn * static_cast<std::size_t>(g.cin) + gi * static_cast<std::size_t>(g.cin_g)) * hw;
                const float* col = xin;
                if (k > 1) {
                    auto& buf = detail::scratch();
                    buf.resize(kdim * hw);
                    detail::im2col(xin, g.cin_g, g.h, g.w, k, buf.data());
                    col = buf.data();
                }
                Eigen::Map<const RowMatrix> cm(col, static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(hw));
                Eigen::Map<const RowMatrix> dm(
                    pd + (nn * static_cast<std::size_t>(g.cout) + gi * static_cast<std::size_t>(g.cout_g)) * hw, g.cout_g,
                    static_cast<Eigen::Index>(hw));
                dw.noalias() += dm * cm.transpose();
            }
        }
    });
    return detail::make_result("conv2d_weight_grad", wshape, std::move(out), {x, dy}, [x, dy, groups](const Tensor& gw) {
        return std::vector<Tensor>{
            x.requires_grad() ? conv2d(dy, conv_adjoint_weights(gw, groups), groups) : Tensor(),
            dy.requires_grad() ? conv2d(x, gw, groups) : Tensor()};
    });
}

// ---------------------------------------------------------------------------
// Separable linear resampling of the two trailing (spatial) axes
// ---------------------------------------------------------------------------

using ResampleMatrix = std::shared_ptr<const RowMatrix>;

/// out[..., i, j] = sum_{p,q} rows(i,p) * cols(j,q) * a[..., p, q].
inline Tensor separable_resample(const Tensor& a, const ResampleMatrix& rows, const ResampleMatrix& cols) {
    if (a.rank() < 2 || a.dim(-2) != rows->cols() || a.dim(-1) != cols->cols())
        throw ShapeError("separable_resample: spatial extent " + shape_str(a.shape()) + " does not match filter");
    const auto hin = static_cast<Eigen::Index>(a.dim(-2)), win = static_cast<Eigen::Index>(a.dim(-1));
    const Eigen::Index hout = rows->rows(), wout = cols->rows();
    const std::size_t planes = a.numel() / static_cast<std::size_t>(hin * win);
    Shape out_shape = a.shape();
    out_shape[out_shape.size() - 2] = static_cast<int>(hout);
    out_shape[out_shape.size() - 1] = static_cast<int>(wout);
    std::vector<float> out(planes * static_cast<std::size_t>(hout * wout));
    const float* p = a.data().data();
    RowMatrix tmp(hout, win);
    const RowMatrix colsT = cols->transpose();
    for (std::size_t i = 0; i < planes; ++i) {
        Eigen::Map<const RowMatrix> x(p + i * static_cast<std::size_t>(hin * win), hin, win);
        tmp.noalias() = (*rows) * x;
        Eigen::Map<RowMatrix>(out.data() + i * static_cast<std::size_t>(hout * wout), hout, wout).noalias() = tmp * colsT;
    }
    return detail::make_result("separable_resample", out_shape, std::move(out), {a}, [rows, cols](const Tensor& g) {
        auto rt = std::make_shared<const RowMatrix>(rows->transpose());
        auto ct = std::make_shared<const RowMatrix>(cols->transpose());
        return std::vector<Tensor>{separable_resample(g, rt, ct)};
    });
}

namespace detail {

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// 1D 2x upsampling with taps [1,3,3,1]/4 (gain 2), replicate borders.
inline RowMatrix upsample_matrix(int n) {
    RowMatrix m = RowMatrix::Zero(2 * n, n);
    for (int i = 0; i < n; ++i) {
        m(2 * i, i) += 0.75f;
        m(2 * i, clamp_index(i - 1, n)) += 0.25f;
        m(2 * i + 1, i) += 0.75f;
        m(2 * i + 1, clamp_index(i + 1, n)) += 0.25f;
    }
    return m;
}

// 1D 2x downsampling with taps [1,3,3,1]/8, replicate borders.
inline RowMatrix downsample_matrix(int n) {
    RowMatrix m = RowMatrix::Zero(n / 2, n);
    for (int i = 0; i < n / 2; ++i) {
        m(i, clamp_index(2 * i - 1, n)) += 0.125f;
        m(i, 2 * i) += 0.375f;
        m(i, 2 * i + 1) += 0.375f;
        m(i, clamp_index(2 * i + 2, n)) += 0.125f;
    }
    return m;
}

// 1D pairwise mean (2x2 box average when applied on both axes).
inline RowMatrix box_matrix(int n) {
    RowMatrix m = RowMatrix::Zero(n / 2, n);
    for (int i = 0; i < n / 2; ++i) m(i, 2 * i) = m(i, 2 * i + 1) = 0.5f;
    return m;
}

template <RowMatrix (*Make)(int)>
ResampleMatrix cached_matrix(int n) {
    thread_local std::unordered_map<int, ResampleMatrix> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto m = std::make_shared<const RowMatrix>(Make(n));
    cache.emplace(n, m);
    return m;
}

}  // namespace detail

enum class ResampleDirection { up, down };

/// 2x bilinear up- or downsampling of the trailing two axes with the separable
/// [1,3,3,1] filter. Constant images stay constant in both directions.
inline Tensor bilinear_resample(const Tensor& a, ResampleDirection dir) {
    if (a.rank() < 2) throw ShapeError("bilinear_resample: needs spatial axes");
    const int h = a.dim(-2), w = a.dim(-1);
    if (dir == ResampleDirection::up)
        return separable_resample(a, detail::cached_matrix<detail::upsample_matrix>(h),
                                  detail::cached_matrix<detail::upsample_matrix>(w));
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("bilinear_resample: odd spatial extent " + shape_str(a.shape()) + " cannot be downsampled");
    return separable_resample(a, detail::cached_matrix<detail::downsample_matrix>(h),
                              detail::cached_matrix<detail::downsample_matrix>(w));
}

inline Tensor upsample2x(const Tensor& a) { return bilinear_resample(a, ResampleDirection::up); }
inline Tensor downsample2x(const Tensor& a) { return bilinear_resample(a, ResampleDirection::down); }

/// Mean over non-overlapping 2x2 neighbourhoods.
inline Tensor box_downsample2x(const Tensor& a) {
    if (a.rank() < 2 || a.dim(-2) % 2 != 0 || a.dim(-1) % 2 != 0)
        throw ShapeError("box_downsample2x: spatial extents must be even");
    return separable_resample(a, detail::cached_matrix<detail::box_matrix>(a.dim(-2)),
                              detail::cached_matrix<detail::box_matrix>(a.dim(-1)));
}

}  // namespace sg2m
