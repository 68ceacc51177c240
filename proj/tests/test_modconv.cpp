// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sg2m/autograd.hpp"
#include "sg2m/gradcheck.hpp"
#include "sg2m/modconv.hpp"

using namespace sg2m;
using Catch::Approx;

namespace {

double max_abs(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
    return m;
}

}  // namespace

TEST_CASE("modulate scales input channels") {
    Rng rng(1);
    const Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
    CHECK(max_abs(modulate(w, Tensor::ones({2})), w) == 0.0);
    CHECK(max_abs(modulate(w, Tensor::full({2}, 2.0f)), scale(w, 2.0f)) == 0.0);

    const Tensor m = modulate(w, Tensor::from_data({2}, {1.0f, 2.0f}));
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 2; ++i)
            for (int t = 0; t < 9; ++t) {
                const std::size_t idx = static_cast<std::size_t>((o * 2 + i) * 9 + t);
                CHECK(m[idx] == w[idx] * (i == 0 ? 1.0f : 2.0f));
            }
    CHECK_THROWS_AS(modulate(w, Tensor::ones({3})), ShapeError);
}

TEST_CASE("demodulate normalizes each output filter") {
    std::vector<float> d(2 * 2 * 1 * 1, 0.0f);
    d[0] = -0.3f;
    d[3] = 5.0f;
    const Tensor single = demodulate(Tensor::from_data({2, 2, 1, 1}, d), 1e-12f);
    CHECK(single[0] == Approx(-1.0f).epsilon(1e-5));
    CHECK(single[3] == Approx(1.0f).epsilon(1e-6));

    const Tensor zero = demodulate(Tensor::zeros({2, 3, 3, 3}));
    for (float v : zero.data()) CHECK(v == 0.0f);

    Rng rng(4);
    const Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    const Tensor dw = demodulate(w);
    for (int o = 0; o < 4; ++o) {
        double ss = 0.0;
        for (int j = 0; j < 27; ++j) ss += std::pow(dw[static_cast<std::size_t>(o * 27 + j)], 2);
        CHECK(ss <= 1.0 + 1e-6);
        CHECK(ss == Approx(1.0).epsilon(1e-5));
    }
    for (float c : {0.1f, 10.0f}) {
        const Tensor dc = demodulate(scale(w, c));
        double m = 0.0;
        for (std::size_t i = 0; i < dw.numel(); ++i) m = std::max(m, static_cast<double>(std::abs((dc[i] - dw[i]) / dw[i])));
        CHECK(m <= 1e-4);
    }
    CHECK_THROWS_AS(demodulate(w, 0.0f), ShapeError);
}

TEST_CASE("demodulated filter norm follows the epsilon formula") {
    // ||w''||^2 = S / (S + eps) for S = ||w'||^2.
    const Tensor w = Tensor::from_data({1, 1, 1, 2}, {3e-4f, 4e-4f});  // S = 2.5e-7
    const float eps = 1e-7f;
    const Tensor d = demodulate(w, eps);
    const double n2 = std::pow(d[0], 2) + std::pow(d[1], 2);
    CHECK(n2 == Approx(2.5e-7 / (2.5e-7 + 1e-7)).epsilon(1e-4));
}

TEST_CASE("single-sample modulated conv equals conv2d with pre-scaled weights") {
    Rng rng(2);
    const Tensor x = Tensor::randn({1, 3, 6, 6}, rng);
    const Tensor w = Tensor::randn({5, 3, 3, 3}, rng);
    const Tensor s = Tensor::randn({1, 3}, rng);
    const Tensor y = modulated_conv2d(x, w, s, false);
    const Tensor ref = conv2d(x, modulate(w, reshape(s, {3})), 1);
    CHECK(max_abs(y, ref) <= 1e-5);
}

TEST_CASE("batched modulated conv matches the per-sample loop") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 4, cin = 1 + static_cast<int>(rng.below(6)), cout = 1 + static_cast<int>(rng.below(6));
        const int k = rng.below(2) ? 3 : 1;
        const Tensor x = Tensor::randn({n, cin, 8, 8}, rng);
        const Tensor w = Tensor::randn({cout, cin, k, k}, rng);
        const Tensor s = Tensor::randn({n, cin}, rng);
        for (bool demod : {true, false}) CHECK(max_abs(modulated_conv2d(x, w, s, demod), modulated_conv2d_reference(x, w, s, demod)) <= 1e-5);
    }
}

TEST_CASE("demodulated output has unit standard deviation for unit inputs") {
    Rng rng(12);
    const int c = 32, trials = 64;
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        const Tensor x = Tensor::randn({1, c, 8, 8}, rng);
        const Tensor w = Tensor::randn({c, c, 3, 3}, rng);
        const Tensor s = Tensor::randn({1, c}, rng);
        const Tensor y = modulated_conv2d(x, w, s, true);
        // Border pixels see zero padding; measure the interior.
        double ss = 0.0;
        int cnt = 0;
        for (int o = 0; o < c; ++o)
            for (int i = 1; i < 7; ++i)
                for (int j = 1; j < 7; ++j) {
                    ss += std::pow(y[static_cast<std::size_t>((o * 8 + i) * 8 + j)], 2);
                    ++cnt;
                }
        acc += std::sqrt(ss / cnt);
    }
    CHECK(acc / trials == Approx(1.0).margin(0.2));
}

TEST_CASE("scaling all styles leaves demodulated output unchanged") {
    Rng rng(3);
    const Tensor x = Tensor::randn({2, 4, 5, 5}, rng);
    const Tensor w = Tensor::randn({3, 4, 3, 3}, rng);
    const Tensor s = Tensor::randn({2, 4}, rng);
    const Tensor a = modulated_conv2d(x, w, s), b = modulated_conv2d(x, w, scale(s, 7.0f));
    CHECK(max_abs(a, b) <= 1e-4);
}

TEST_CASE("modulated conv gradients match finite differences") {
    Rng rng(21);
    const TensorFn f = [](const std::vector<Tensor>& p) { return modulated_conv2d(p[0], p[1], p[2], true); };
    const std::vector<Tensor> in{Tensor::randn({2, 3, 4, 4}, rng), Tensor::randn({2, 3, 3, 3}, rng),
                                 detail::randn_away_from_zero({2, 3}, rng, 0.5f)};
    CHECK(check_gradient(f, in, 1e-3).rel_error <= 1e-3);
    CHECK(check_second_gradient(f, in, 1e-3).rel_error <= 1e-2);
}

TEST_CASE("modulated conv rejects mismatched operands") {
    const Tensor x = Tensor::zeros({2, 3, 4, 4});
    CHECK_THROWS_AS(modulated_conv2d(x, Tensor::ones({2, 3, 3, 3}), Tensor::ones({1, 3})), ShapeError);
    CHECK_THROWS_AS(modulated_conv2d(x, Tensor::ones({2, 4, 3, 3}), Tensor::ones({2, 4})), ShapeError);
    CHECK_THROWS_AS(modulated_conv2d(x, Tensor::ones({2, 3, 3, 3}), Tensor::ones({2, 2})), ShapeError);
}

TEST_CASE("adain normalizes each channel before applying the style") {
    Rng rng(5);
    const Tensor x = Tensor::randn({2, 3, 6, 6}, rng);
    const Tensor y = adain(x, Tensor::full({2, 3}, 2.0f), Tensor::full({2, 3}, 0.5f));
    for (int c = 0; c < 6; ++c) {
        double m = 0.0, v = 0.0;
        for (int i = 0; i < 36; ++i) m += y[static_cast<std::size_t>(c * 36 + i)];
        m /= 36;
        for (int i = 0; i < 36; ++i) v += std::pow(y[static_cast<std::size_t>(c * 36 + i)] - m, 2);
        CHECK(m == Approx(0.5).margin(1e-5));
        CHECK(std::sqrt(v / 36) == Approx(2.0).epsilon(1e-4));
    }
}
