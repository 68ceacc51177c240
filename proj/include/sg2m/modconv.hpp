// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "sg2m/ops.hpp"

namespace sg2m {

inline constexpr float kDemodEpsilon = 1e-8f;

namespace detail {

inline void require_conv_weights(const Tensor& w, const char* op) {
    if (w.rank() != 4) throw ShapeError(std::string(op) + ": weights must be [Cout,Cin,k,k], got " + shape_str(w.shape()));
}

}  // namespace detail

/// w'[o,i,..] = s[i] * w[o,i,..] for one style vector s of length Cin.
inline Tensor modulate(const Tensor& weights, const Tensor& s) {
    detail::require_conv_weights(weights, "modulate");
    if (s.rank() != 1 || s.dim(0) != weights.dim(1))
        throw ShapeError("modulate: style " + shape_str(s.shape()) + " does not match weights " +
                         shape_str(weights.shape()));
    return mul(weights, reshape(s, {1, s.dim(0), 1, 1}));
}

/// Divides every output filter (leading axis) by sqrt(sum of its squares + eps).
/// Works for [Cout,Cin,k,k] and batched [N,Cout,Cin,k,k] weights.
inline Tensor demodulate(const Tensor& w_prime, float eps = kDemodEpsilon) {
    if (!(eps > 0.0f)) throw ShapeError("demodulate: epsilon must be positive");
    if (w_prime.rank() != 4 && w_prime.rank() != 5)
        throw ShapeError("demodulate: expected rank 4 or 5 weights, got " + shape_str(w_prime.shape()));
    const int r = w_prime.rank();
    const Tensor ss = sum(square(w_prime), {r - 3, r - 2, r - 1}, true);
    return mul(w_prime, rsqrt(add_scalar(ss, eps)));
}

/// Per-sample weights [N,Cout,Cin,k,k] for styles [N,Cin].
inline Tensor modulated_weights(const Tensor& weights, const Tensor& styles, bool demod, float eps = kDemodEpsilon) {
    detail::require_conv_weights(weights, "modulated_conv2d");
    if (styles.rank() != 2 || styles.dim(1) != weights.dim(1))
        throw ShapeError("modulated_conv2d: styles " + shape_str(styles.shape()) + " do not match weights " +
                         shape_str(weights.shape()));
    const int n = styles.dim(0), cout = weights.dim(0), cin = weights.dim(1), k = weights.dim(2);
    Tensor w = mul(reshape(weights, {1, cout, cin, k, k}), reshape(styles, {n, 1, cin, 1, 1}));
    return demod ? demodulate(w, eps) : w;
}

/// One grouped convolution: the batch is folded into channels so that sample n
/// is convolved with its own weight set.
inline Tensor modulated_conv2d(const Tensor& input, const Tensor& weights, const Tensor& styles, bool demod = true,
                               float eps = kDemodEpsilon) {
    if (input.rank() != 4) throw ShapeError("modulated_conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
    const Tensor w = modulated_weights(weights, styles, demod, eps);
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), wd = input.dim(3);
    if (styles.dim(0) != n)
        throw ShapeError("modulated_conv2d: " + std::to_string(styles.dim(0)) + " styles for batch of " +
                         std::to_string(n));
    if (cin != weights.dim(1))
        throw ShapeError("modulated_conv2d: input channels " + std::to_string(cin) + " vs weights " +
                         shape_str(weights.shape()));
    const int cout = weights.dim(0), k = weights.dim(2);
    const Tensor x = reshape(input, {1, n * cin, h, wd});
    const Tensor y = conv2d(x, reshape(w, {n * cout, cin, k, k}), n);
    return reshape(y, {n, cout, h, wd});
}

/// Sample-by-sample evaluation without the grouped trick.
inline Tensor modulated_conv2d_reference(const Tensor& input, const Tensor& weights, const Tensor& styles,
                                         bool demod = true, float eps = kDemodEpsilon) {
    std::vector<Tensor> outs;
    for (int i = 0; i < input.dim(0); ++i) {
        Tensor w = modulate(weights, reshape(slice(styles, 0, i, 1), {styles.dim(1)}));
        if (demod) w = demodulate(w, eps);
        outs.push_back(conv2d(slice(input, 0, i, 1), w, 1));
    }
    return concat(outs, 0);
}

/// Instance normalization followed by per-channel scale and bias (the older
/// style block), used only for comparison.
inline Tensor adain(const Tensor& x, const Tensor& scale_ns, const Tensor& bias_ns, float eps = 1e-8f) {
    const int n = x.dim(0), c = x.dim(1);
    const Tensor mu = mean(x, {2, 3}, true);
    const Tensor centered = sub(x, mu);
    const Tensor var = mean(square(centered), {2, 3}, true);
    const Tensor normed = mul(centered, rsqrt(add_scalar(var, eps)));
    return add(mul(normed, reshape(scale_ns, {n, c, 1, 1})), reshape(bias_ns, {n, c, 1, 1}));
}

}  // namespace sg2m
