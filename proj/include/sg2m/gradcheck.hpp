// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference checks of the differentiation engine. The difference
// quotients only evaluate functions forward, so they are independent of the
// backward rules they check. Quotients are accumulated in double.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sg2m/autograd.hpp"
#include "sg2m/ops.hpp"
#include "sg2m/rng.hpp"

namespace sg2m {

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradcheckResult {
    double rel_error = 0.0;  // max over inputs of ||ad - fd|| / max(||ad||, ||fd||)
    double ad_norm = 0.0;
    double fd_norm = 0.0;
};

namespace detail {

inline double dot_d(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

inline Tensor with_element(const Tensor& t, std::size_t i, float v) {
    auto d = t.to_vector();
    d[i] = v;
    return Tensor::from_data(t.shape(), std::move(d));
}

inline void accumulate_error(GradcheckResult& r, const std::vector<double>& ad, const std::vector<double>& fd) {
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        diff += (ad[i] - fd[i]) * (ad[i] - fd[i]);
        na += ad[i] * ad[i];
        nf += fd[i] * fd[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-12});
    const double rel = std::sqrt(diff) / denom;
    if (rel > r.rel_error) r.rel_error = rel;
    r.ad_norm += na;
    r.fd_norm += nf;
}

// Applies `body(input_index, element, x_plus, x_minus, actual_step)` for every
// element, where x_plus/x_minus are the input lists with one element shifted.
template <class Body>
void for_each_perturbation(const std::vector<Tensor>& inputs, double h, Body&& body) {
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
            const float x = inputs[k][i];
            const float xp = static_cast<float>(x + h), xm = static_cast<float>(x - h);
            auto plus = inputs, minus = inputs;
            plus[k] = with_element(inputs[k], i, xp);
            minus[k] = with_element(inputs[k], i, xm);
            body(k, i, plus, minus, static_cast<double>(xp) - static_cast<double>(xm));
        }
}

inline std::vector<Tensor> as_variables(const std::vector<Tensor>& xs) {
    std::vector<Tensor> v;
    for (const auto& x : xs) v.push_back(x.variable());
    return v;
}

}  // namespace detail

/// Compares d/dx of sum(f(x) * r) (r a fixed random tensor) against central
/// differences with step h.
inline GradcheckResult check_gradient(const TensorFn& f, const std::vector<Tensor>& inputs, double h = 1e-3,
                                      std::uint64_t seed = 1) {
    Rng rng(seed);
    const Tensor probe = Tensor::randn(f(inputs).shape(), rng);

    auto vars = detail::as_variables(inputs);
    const Tensor s = sum(mul(f(vars), probe));
    const auto ad = grad(s, vars, false, true);

    std::vector<std::vector<double>> fd(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) fd[k].resize(inputs[k].numel());
    {
        NoGradGuard ng;
        detail::for_each_perturbation(inputs, h, [&](std::size_t k, std::size_t i, auto& plus, auto& minus, double step) {
            fd[k][i] = (detail::dot_d(f(plus), probe) - detail::dot_d(f(minus), probe)) / step;
        });
    }
    GradcheckResult r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> a(ad[k].data().begin(), ad[k].data().end());
        detail::accumulate_error(r, a, fd[k]);
    }
    r.ad_norm = std::sqrt(r.ad_norm);
    r.fd_norm = std::sqrt(r.fd_norm);
    return r;
}

/// Second-order check: with g(x) = d/dx sum(f(x) * r), compares the gradient of
/// sum(g(x) * q) obtained by differentiating the backward pass against central
/// differences of that same first-order quantity.
inline GradcheckResult check_second_gradient(const TensorFn& f, const std::vector<Tensor>& inputs, double h = 1e-3,
                                             std::uint64_t seed = 2) {
    Rng rng(seed);
    const Tensor probe = Tensor::randn(f(inputs).shape(), rng);
    std::vector<Tensor> q;
    for (const auto& x : inputs) q.push_back(Tensor::randn(x.shape(), rng));

    // Scalar function of the first-order gradient, evaluated through AD.
    auto first_order_probe = [&](const std::vector<Tensor>& xs, bool create_graph) {
        auto vars = detail::as_variables(xs);
        const Tensor s = sum(mul(f(vars), probe));
        auto g = grad(s, vars, create_graph, true);
        return std::make_pair(vars, g);
    };

    auto [vars, g1] = first_order_probe(inputs, true);
    Tensor h_total = Tensor::scalar(0.0f);
    for (std::size_t k = 0; k < inputs.size(); ++k) h_total = add(h_total, sum(mul(g1[k], q[k])));
    std::vector<Tensor> ad;
    if (h_total.requires_grad()) {
        ad = grad(h_total, vars, false, true);
    } else {
        for (const auto& x : inputs) ad.push_back(Tensor::zeros(x.shape()));
    }

    std::vector<std::vector<double>> fd(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) fd[k].resize(inputs[k].numel());
    detail::for_each_perturbation(inputs, h, [&](std::size_t k, std::size_t i, auto& plus, auto& minus, double step) {
        auto eval = [&](const std::vector<Tensor>& xs) {
            auto [v, g] = first_order_probe(xs, false);
            double acc = 0.0;
            for (std::size_t j = 0; j < xs.size(); ++j) acc += detail::dot_d(g[j], q[j]);
            return acc;
        };
        fd[k][i] = (eval(plus) - eval(minus)) / step;
    });
    GradcheckResult r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> a(ad[k].data().begin(), ad[k].data().end());
        detail::accumulate_error(r, a, fd[k]);
    }
    r.ad_norm = std::sqrt(r.ad_norm);
    r.fd_norm = std::sqrt(r.fd_norm);
    return r;
}

/// A named gradient check over one primitive (or a small composite).
struct GradcheckCase {
    std::string name;
    TensorFn fn;
    std::vector<Tensor> inputs;
    bool second_order = false;
};

namespace detail {

// Gaussian samples pushed at least `margin` away from zero, so that a step of
// h never crosses the kink of piecewise-linear functions.
inline Tensor randn_away_from_zero(const Shape& s, Rng& rng, float margin = 0.05f) {
    std::vector<float> d(shape_numel(s));
    for (auto& x : d) {
        float v = rng.normalf();
        x = v >= 0.0f ? v + margin : v - margin;
    }
    return Tensor::from_data(s, std::move(d));
}

inline Tensor positive(const Shape& s, Rng& rng, float lo = 0.5f, float hi = 2.0f) {
    return Tensor::uniform(s, rng, lo, hi);
}

}  // namespace detail

/// The standard suite: every differentiable primitive on small random inputs.
inline std::vector<GradcheckCase> standard_gradcheck_suite(std::uint64_t seed = 7) {
    Rng rng(seed);
    auto rn = [&](Shape s) { return Tensor::randn(std::move(s), rng); };
    std::vector<GradcheckCase> c;
    c.push_back({"add_broadcast", [](auto& x) { return add(x[0], x[1]); }, {rn({2, 3, 4}), rn({3, 1})}});
    c.push_back({"sub_broadcast", [](auto& x) { return sub(x[0], x[1]); }, {rn({2, 3}), rn({3})}});
    c.push_back({"mul_broadcast", [](auto& x) { return mul(x[0], x[1]); }, {rn({2, 3, 4}), rn({1, 3, 1})}, true});
    c.push_back({"scale", [](auto& x) { return scale(x[0], -1.7f); }, {rn({5})}});
    c.push_back({"add_scalar", [](auto& x) { return add_scalar(x[0], 0.3f); }, {rn({5})}});
    c.push_back({"square", [](auto& x) { return square(x[0]); }, {rn({2, 5})}, true});
    c.push_back({"sqrt", [](auto& x) { return sqrt(x[0]); }, {detail::positive({6}, rng)}, true});
    c.push_back({"rsqrt", [](auto& x) { return rsqrt(x[0]); }, {detail::positive({6}, rng)}, true});
    c.push_back({"safe_recip", [](auto& x) { return safe_recip(x[0]); }, {detail::positive({6}, rng)}, true});
    c.push_back({"sigmoid", [](auto& x) { return sigmoid(x[0]); }, {rn({7})}, true});
    c.push_back({"softplus", [](auto& x) { return softplus(x[0]); }, {rn({7})}, true});
    c.push_back({"leaky_relu_scaled", [](auto& x) { return leaky_relu_scaled(x[0], 0.2f); },
                 {detail::randn_away_from_zero({3, 4}, rng)}});
    c.push_back({"leaky_relu_scaled_composite",
                 [](auto& x) { return mul(leaky_relu_scaled(mul(x[0], x[1]), 0.2f), x[1]); },
                 {detail::randn_away_from_zero({3, 4}, rng), detail::positive({3, 4}, rng)},
                 true});
    c.push_back({"lerp", [](auto& x) { return lerp(x[0], x[1], 0.3f); }, {rn({4}), rn({4})}});
    c.push_back({"reshape", [](auto& x) { return mul(reshape(x[0], {3, 4}), x[1]); }, {rn({2, 6}), rn({3, 4})}});
    c.push_back({"sum_to", [](auto& x) { return sum_to(x[0], {1, 3, 1}); }, {rn({2, 3, 4})}});
    c.push_back({"broadcast_to", [](auto& x) { return broadcast_to(x[0], {2, 3, 4}); }, {rn({3, 1})}});
    c.push_back({"sum_axes", [](auto& x) { return sum(x[0], {0, 2}); }, {rn({2, 3, 4})}});
    c.push_back({"mean", [](auto& x) { return mean(square(x[0])); }, {rn({2, 3})}, true});
    c.push_back({"slice", [](auto& x) { return slice(x[0], 1, 1, 2); }, {rn({2, 4, 3})}});
    c.push_back({"embed", [](auto& x) { return embed(x[0], 1, 1, 5); }, {rn({2, 2, 3})}});
    c.push_back({"concat", [](auto& x) { return concat({x[0], x[1]}, 1); }, {rn({2, 2, 3}), rn({2, 1, 3})}});
    c.push_back({"roll", [](auto& x) { return roll(x[0], 1, -1); }, {rn({2, 5})}});
    c.push_back({"transpose", [](auto& x) { return transpose(x[0]); }, {rn({3, 4})}});
    c.push_back({"matmul", [](auto& x) { return matmul(x[0], x[1]); }, {rn({3, 4}), rn({4, 2})}, true});
    c.push_back({"matmul_tanhlike", [](auto& x) { return matmul(softplus(matmul(x[0], x[1])), x[2]); },
                 {rn({3, 4}), rn({4, 5}), rn({5, 2})},
                 true});
    c.push_back({"conv2d_3x3", [](auto& x) { return conv2d(x[0], x[1], 1); }, {rn({2, 3, 5, 4}), rn({4, 3, 3, 3})},
                 true});
    c.push_back({"conv2d_1x1", [](auto& x) { return conv2d(x[0], x[1], 1); }, {rn({2, 3, 4, 4}), rn({2, 3, 1, 1})},
                 true});
    c.push_back({"conv2d_grouped", [](auto& x) { return conv2d(x[0], x[1], 2); }, {rn({1, 4, 4, 4}), rn({6, 2, 3, 3})},
                 true});
    c.push_back({"conv2d_squared", [](auto& x) { return square(conv2d(x[0], x[1], 1)); },
                 {rn({1, 2, 4, 4}), rn({2, 2, 3, 3})},
                 true});
    c.push_back({"conv2d_weight_grad", [](auto& x) { return conv2d_weight_grad(x[0], x[1], 1, 3); },
                 {rn({2, 2, 4, 4}), rn({2, 3, 4, 4})},
                 true});
    c.push_back({"conv_adjoint_weights", [](auto& x) { return conv_adjoint_weights(x[0], 2); }, {rn({4, 3, 3, 3})}});
    c.push_back({"upsample2x", [](auto& x) { return upsample2x(x[0]); }, {rn({1, 2, 3, 4})}});
    c.push_back({"downsample2x", [](auto& x) { return downsample2x(x[0]); }, {rn({1, 2, 4, 6})}});
    c.push_back({"box_downsample2x", [](auto& x) { return box_downsample2x(x[0]); }, {rn({1, 1, 4, 4})}});
    return c;
}

}  // namespace sg2m
