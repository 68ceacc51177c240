// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sg2m/autograd.hpp"
#include "sg2m/gradcheck.hpp"
#include "sg2m/ops.hpp"

using namespace sg2m;
using Catch::Approx;

namespace {

// Direct nested-loop convolution used as an oracle for the im2col/GEMM path.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, int groups) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2), pad = k / 2;
    const int cin_g = cin / groups, cout_g = cout / groups;
    std::vector<double> out(static_cast<std::size_t>(n * cout * h * wd), 0.0);
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < cout; ++o) {
            const int g = o / cout_g;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wd; ++xx) {
                    double acc = 0.0;
                    for (int i = 0; i < cin_g; ++i)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y + ky - pad, ix = xx + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += static_cast<double>(x[((static_cast<std::size_t>(b) * cin + g * cin_g + i) * h + iy) * wd + ix]) *
                                       static_cast<double>(w[((static_cast<std::size_t>(o) * cin_g + i) * k + ky) * k + kx]);
                            }
                    out[((static_cast<std::size_t>(b) * cout + o) * h + y) * wd + xx] = acc;
                }
        }
    return out;
}

double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 sums the full neighbourhood at the center") {
    const Tensor x = Tensor::ones({1, 1, 3, 3});
    const Tensor w = Tensor::ones({1, 1, 3, 3});
    const Tensor y = conv2d(x, w, 1);
    CHECK(y[4] == 9.0f);
    CHECK(y[0] == 4.0f);  // corner sees a 2x2 window
    CHECK(y[1] == 6.0f);
}

TEST_CASE("conv2d with a centered unit kernel is the identity") {
    Rng rng(3);
    const Tensor x = Tensor::randn({2, 3, 5, 6}, rng);
    std::vector<float> wd(3 * 3 * 9, 0.0f);
    for (int c = 0; c < 3; ++c) wd[static_cast<std::size_t>((c * 3 + c) * 9 + 4)] = 1.0f;
    const Tensor y = conv2d(x, Tensor::from_data({3, 3, 3, 3}, wd), 1);
    for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y[i] == x[i]);
}

TEST_CASE("conv2d matches a direct loop, including grouped and 1x1 kernels") {
    Rng rng(11);
    struct Case {
        Shape x, w;
        int groups;
    };
    for (const auto& c : std::vector<Case>{{{2, 3, 7, 5}, {4, 3, 3, 3}, 1},
                                           {{1, 6, 4, 4}, {9, 2, 3, 3}, 3},
                                           {{3, 4, 6, 6}, {2, 4, 1, 1}, 1},
                                           {{1, 4, 8, 8}, {4, 4, 5, 5}, 1}}) {
        const Tensor x = Tensor::randn(c.x, rng), w = Tensor::randn(c.w, rng);
        CHECK(max_abs_diff(conv2d(x, w, c.groups), naive_conv(x, w, c.groups)) <= 1e-4);
    }
}

TEST_CASE("conv2d with groups=N equals N independent convolutions") {
    Rng rng(5);
    const int groups = 4, cin_g = 3, cout_g = 2;
    const Tensor x = Tensor::randn({1, groups * cin_g, 6, 6}, rng);
    const Tensor w = Tensor::randn({groups * cout_g, cin_g, 3, 3}, rng);
    const Tensor y = conv2d(x, w, groups);
    for (int g = 0; g < groups; ++g) {
        const Tensor yg = conv2d(slice(x, 1, g * cin_g, cin_g), slice(w, 0, g * cout_g, cout_g), 1);
        const Tensor part = slice(y, 1, g * cout_g, cout_g);
        double m = 0.0;
        for (std::size_t i = 0; i < yg.numel(); ++i) m = std::max(m, static_cast<double>(std::abs(yg[i] - part[i])));
        CHECK(m <= 1e-5);
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 2, 3, 3}), 1), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 1, 3, 3}), 2), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({2, 2, 2, 2}), 1), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({2, 2, 3, 3}), 1), ShapeError);
}

TEST_CASE("bilinear resampling preserves constants") {
    const Tensor c = Tensor::full({1, 2, 4, 4}, 0.7f);
    const Tensor up = upsample2x(c);
    const Tensor down = downsample2x(c);
    REQUIRE(up.shape() == Shape{1, 2, 8, 8});
    REQUIRE(down.shape() == Shape{1, 2, 2, 2});
    for (float v : up.data()) CHECK(v == Approx(0.7f).epsilon(1e-6));
    for (float v : down.data()) CHECK(v == Approx(0.7f).epsilon(1e-6));
    const Tensor round_trip = downsample2x(upsample2x(c));
    for (float v : round_trip.data()) CHECK(v == Approx(0.7f).epsilon(1e-6));
}

TEST_CASE("downsampling an impulse reproduces the filter taps") {
    // Oracle: out(i,j) = sum_{a,b} f[a] f[b] x(clamp(2i-1+a), clamp(2j-1+b)),
    // f = [1,3,3,1]/8, borders replicated.
    std::vector<float> d(16, 0.0f);
    d[0] = 1.0f;
    const Tensor x = Tensor::from_data({1, 1, 4, 4}, d);
    const Tensor y = downsample2x(x);
    const double f[4] = {1.0 / 8, 3.0 / 8, 3.0 / 8, 1.0 / 8};
    auto clampi = [](int i) { return std::min(3, std::max(0, i)); };
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double expect = 0.0;
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    expect += f[a] * f[b] * d[static_cast<std::size_t>(clampi(2 * i - 1 + a) * 4 + clampi(2 * j - 1 + b))];
            CHECK(y[static_cast<std::size_t>(i * 2 + j)] == Approx(expect).margin(1e-7));
        }
    CHECK(y[0] == Approx(0.25));
}

TEST_CASE("downsampling an odd extent is an error") {
    CHECK_THROWS_AS(downsample2x(Tensor::zeros({1, 1, 5, 4})), ShapeError);
}

TEST_CASE("scaled leaky ReLU values and variance") {
    const float alpha = 0.2f;
    const Tensor y = leaky_relu_scaled(Tensor::from_data({2}, {0.0f, -1.0f}), alpha);
    CHECK(y[0] == 0.0f);
    const double expect = -0.2 * std::sqrt(2.0 / (1.0 + 0.04));
    CHECK(y[1] == Approx(expect).epsilon(1e-6));
    CHECK(y[1] == Approx(-0.27735).margin(1e-5));

    Rng rng(17);
    const Tensor big = leaky_relu_scaled(Tensor::randn({1000000}, rng), alpha);
    double s = 0.0, s2 = 0.0;
    for (float v : big.data()) {
        s += v;
        s2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(big.numel());
    // Second moment is preserved; that is the quantity a downstream layer sees.
    CHECK(std::sqrt(s2 / n) == Approx(1.0).epsilon(0.01));
    CHECK_THROWS_AS(leaky_relu_scaled(big, 1.5f), ShapeError);
}

TEST_CASE("primitives have their usual values") {
    const Tensor a = Tensor::from_data({3}, {1, 2, 3});
    const Tensor b = Tensor::from_data({3}, {4, -5, 6});
    CHECK(mean(a).item() == 2.0f);
    const Tensor l0 = lerp(a, b, 0.0f), l1 = lerp(a, b, 1.0f);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(l0[i] == a[i]);
        CHECK(l1[i] == b[i]);
    }
    const Tensor m = matmul(Tensor::from_data({2, 2}, {1, 2, 3, 4}), Tensor::from_data({2, 1}, {5, 6}));
    CHECK(m[0] == 17.0f);
    CHECK(m[1] == 39.0f);
    CHECK(rsqrt(Tensor::from_data({1}, {4}))[0] == 0.5f);
    CHECK(sqrt(Tensor::from_data({1}, {0}))[0] == 0.0f);
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(rsqrt(Tensor::zeros({1})), NumericError);
}

TEST_CASE("backward: f(x)=x^2 at 3 has gradient 6") {
    const Tensor x = Tensor::from_data({}, {3.0f}).variable();
    const auto g = grad(square(x), {x});
    CHECK(g[0].item() == 6.0f);
}

TEST_CASE("double backward: second derivative of x^3 at 2 is 12") {
    const Tensor x = Tensor::from_data({}, {2.0f}).variable();
    const Tensor y = mul(square(x), x);
    const auto g1 = grad(y, {x}, true);
    CHECK(g1[0].item() == 12.0f);  // 3x^2
    const auto g2 = grad(g1[0], {x});
    CHECK(g2[0].item() == 12.0f);  // 6x
}

TEST_CASE("backward through a random 2-layer net matches central differences") {
    // Oracle: the same net evaluated in double, differentiated by central
    // differences. Loss = sum(probe * (leaky(x W1 + b1) W2)).
    Rng rng(23);
    const int n = 4, din = 5, dh = 6, dout = 3;
    std::vector<Tensor> p;
    // Redraw until no pre-activation sits within reach of the kink at 0.
    for (bool near_kink = true; near_kink;) {
        p = {Tensor::randn({n, din}, rng), Tensor::randn({din, dh}, rng), Tensor::randn({dh}, rng),
             Tensor::randn({dh, dout}, rng)};
        const Tensor pre = add(matmul(p[0], p[1]), p[2]);
        near_kink = false;
        for (float v : pre.data()) near_kink |= std::abs(v) < 0.05f;
    }
    const Tensor probe = Tensor::randn({n, dout}, rng);
    const double gain = std::sqrt(2.0 / 1.04);

    auto loss_d = [&](const std::vector<std::vector<double>>& v) {
        double total = 0.0;
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < dout; ++o) {
                double acc = 0.0;
                for (int j = 0; j < dh; ++j) {
                    double pre = v[2][static_cast<std::size_t>(j)];
                    for (int k = 0; k < din; ++k)
                        pre += v[0][static_cast<std::size_t>(i * din + k)] * v[1][static_cast<std::size_t>(k * dh + j)];
                    const double act = (pre >= 0 ? pre : 0.2 * pre) * gain;
                    acc += act * v[3][static_cast<std::size_t>(j * dout + o)];
                }
                total += acc * probe[static_cast<std::size_t>(i * dout + o)];
            }
        return total;
    };

    std::vector<Tensor> vars;
    for (const auto& t : p) vars.push_back(t.variable());
    const Tensor h = leaky_relu_scaled(add(matmul(vars[0], vars[1]), vars[2]), 0.2f);
    const auto ad = grad(sum(mul(matmul(h, vars[3]), probe)), vars);

    std::vector<std::vector<double>> base;
    for (const auto& t : p) base.emplace_back(t.data().begin(), t.data().end());
    double diff = 0.0, na = 0.0, nf = 0.0;
    const double step = 1e-3;
    for (std::size_t k = 0; k < base.size(); ++k)
        for (std::size_t i = 0; i < base[k].size(); ++i) {
            auto plus = base, minus = base;
            plus[k][i] += step;
            minus[k][i] -= step;
            const double fd = (loss_d(plus) - loss_d(minus)) / (2 * step);
            const double a = ad[k][i];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
    CHECK(std::sqrt(diff) / std::max(std::sqrt(na), std::sqrt(nf)) <= 1e-3);
    CHECK(na > 0.0);
}

TEST_CASE("grad errors") {
    const Tensor x = Tensor::from_data({2}, {1, 2}).variable();
    const Tensor y = Tensor::from_data({2}, {1, 2}).variable();
    CHECK_THROWS_AS(grad(square(x), {x}), GraphError);
    CHECK_THROWS_AS(grad(sum(square(x)), {y}), GraphError);
    const auto g = grad(sum(square(x)), {x, y}, false, true);
    CHECK(g[1][0] == 0.0f);
}

TEST_CASE("gradients with respect to intermediate tensors") {
    const Tensor x = Tensor::from_data({2}, {1, 2}).variable();
    const Tensor mid = scale(x, 3.0f);
    const Tensor out = sum(square(mid));
    const auto g = grad(out, {mid, x});
    CHECK(g[0][1] == 12.0f);  // 2*mid
    CHECK(g[1][1] == 36.0f);  // 2*mid*3
}

TEST_CASE("non-finite results raise NumericError") {
    const Tensor big = Tensor::full({2}, 3e38f);
    CHECK_THROWS_AS(add(big, big), NumericError);
    FiniteCheckGuard off(false);
    CHECK_NOTHROW(add(big, big));
}

TEST_CASE("no-grad mode records nothing") {
    const Tensor x = Tensor::ones({2}).variable();
    NoGradGuard ng;
    CHECK_FALSE(square(x).requires_grad());
}

TEST_CASE("every primitive passes first-order finite-difference checks") {
    for (const auto& c : standard_gradcheck_suite()) {
        INFO(c.name);
        const auto r = check_gradient(c.fn, c.inputs, 1e-3);
        CHECK(r.rel_error <= 1e-3);
    }
}

TEST_CASE("conv2d, matmul and the activation pass second-order checks") {
    for (const auto& c : standard_gradcheck_suite()) {
        if (!c.second_order) continue;
        INFO(c.name);
        const auto r = check_second_gradient(c.fn, c.inputs, 1e-3);
        CHECK(r.rel_error <= 1e-2);
    }
}

TEST_CASE("identical seeds give bit-identical results") {
    auto run = [] {
        Rng rng(99);
        const Tensor x = Tensor::randn({2, 4, 8, 8}, rng).variable();
        const Tensor w = Tensor::randn({4, 4, 3, 3}, rng).variable();
        const Tensor y = sum(square(leaky_relu_scaled(conv2d(upsample2x(x), w, 1))));
        auto g = grad(y, {x, w});
        auto v = g[0].to_vector();
        auto v2 = g[1].to_vector();
        v.insert(v.end(), v2.begin(), v2.end());
        v.push_back(y.item());
        return v;
    };
    CHECK(run() == run());
}
