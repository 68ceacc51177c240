// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "sg2m/config.hpp"
#include "sg2m/tensor.hpp"

namespace sg2m {

struct ChannelStats {
    std::vector<double> mean, stddev;
};

/// Procedural RGB images in [-1, 1]. Image i depends only on (kind, seed, i).
///
///   blobs      dark blue-grey background with 1 to 3 soft warm-coloured
///              Gaussian blobs. At 32x32 (seed 1, 1000 images) the channel
///              means are (-0.545, -0.562, -0.430), std (0.40, 0.24, 0.11).
///   gradients  linear ramp between two uniform random colours; channel means
///              near 0, std about 0.45.
///   rings      concentric cosine rings of one random colour; channel means
///              near 0, std about 0.41.
///
/// `channel_stats` measures the exact values for any configuration.
class SyntheticDataset {
public:
    SyntheticDataset(DatasetSpec spec, int resolution) : spec_(std::move(spec)), res_(resolution) {
        if (spec_.kind != "blobs" && spec_.kind != "gradients" && spec_.kind != "rings")
            throw ConfigError("unknown dataset '" + spec_.kind + "'");
        if (spec_.size < 1) throw ConfigError("dataset size must be >= 1");
        if (res_ < 1) throw ConfigError("dataset resolution must be >= 1");
    }

    int size() const { return spec_.size; }
    int resolution() const { return res_; }
    const DatasetSpec& spec() const { return spec_; }

    /// [1, 3, r, r]
    Tensor image(int index) const {
        if (index < 0 || index >= spec_.size) throw ShapeError("dataset index out of range");
        Rng rng(mix_seed(spec_.seed, static_cast<std::uint64_t>(index)));
        std::vector<float> px(3 * static_cast<std::size_t>(res_) * static_cast<std::size_t>(res_));
        if (spec_.kind == "blobs") draw_blobs(px, rng);
        else if (spec_.kind == "gradients") draw_gradient(px, rng);
        else draw_rings(px, rng);
        for (auto& v : px) v = std::clamp(v, -1.0f, 1.0f);
        return Tensor::from_data({1, 3, res_, res_}, std::move(px));
    }

    /// `n` images drawn uniformly with replacement.
    Tensor batch(int n, Rng& rng) const {
        std::vector<Tensor> imgs;
        for (int i = 0; i < n; ++i) imgs.push_back(image(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec_.size)))));
        return concat(imgs, 0);
    }

    BatchSource source() const {
        return [self = *this](int n, Rng& rng) { return self.batch(n, rng); };
    }

    /// Per-channel mean and std over the first `n` images (all if n <= 0).
    ChannelStats channel_stats(int n = 0) const {
        const int count = n <= 0 ? spec_.size : std::min(n, spec_.size);
        std::array<double, 3> s{}, s2{};
        const std::size_t plane = static_cast<std::size_t>(res_) * static_cast<std::size_t>(res_);
        for (int i = 0; i < count; ++i) {
            const Tensor img = image(i);
            const auto d = img.data();
            for (int c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < plane; ++p) {
                    const double v = d[static_cast<std::size_t>(c) * plane + p];
                    s[static_cast<std::size_t>(c)] += v;
                    s2[static_cast<std::size_t>(c)] += v * v;
                }
        }
        ChannelStats st;
        const double m = static_cast<double>(count) * static_cast<double>(plane);
        for (int c = 0; c < 3; ++c) {
            const double mu = s[static_cast<std::size_t>(c)] / m;
            st.mean.push_back(mu);
            st.stddev.push_back(std::sqrt(std::max(0.0, s2[static_cast<std::size_t>(c)] / m - mu * mu)));
        }
        return st;
    }

private:
    void put(std::vector<float>& px, int y, int x, const std::array<double, 3>& rgb) const {
        const std::size_t plane = static_cast<std::size_t>(res_) * static_cast<std::size_t>(res_);
        for (int c = 0; c < 3; ++c)
            px[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y * res_ + x)] = static_cast<float>(rgb[static_cast<std::size_t>(c)]);
    }

    void draw_blobs(std::vector<float>& px, Rng& rng) const {
        const std::array<double, 3> bg{-0.8 + 0.1 * rng.normal(), -0.7 + 0.1 * rng.normal(), -0.4 + 0.1 * rng.normal()};
        for (int y = 0; y < res_; ++y)
            for (int x = 0; x < res_; ++x) put(px, y, x, bg);
        const int blobs = 1 + static_cast<int>(rng.below(3));
        const std::size_t plane = static_cast<std::size_t>(res_) * static_cast<std::size_t>(res_);
        for (int b = 0; b < blobs; ++b) {
            const std::array<double, 3> col{rng.uniform(0.3, 1.0), rng.uniform(-0.4, 0.6), rng.uniform(-0.9, -0.2)};
            const double cx = rng.uniform(0.15, 0.85) * res_, cy = rng.uniform(0.15, 0.85) * res_;
            const double sigma = rng.uniform(1.0 / 12.0, 1.0 / 6.0) * res_;
            for (int y = 0; y < res_; ++y)
                for (int x = 0; x < res_; ++x) {
                    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    const double a = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    for (int c = 0; c < 3; ++c) {
                        float& v = px[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y * res_ + x)];
                        v = static_cast<float>((1.0 - a) * v + a * col[static_cast<std::size_t>(c)]);
                    }
                }
        }
    }

    void draw_gradient(std::vector<float>& px, Rng& rng) const {
        std::array<double, 3> c0{}, c1{};
        for (auto& v : c0) v = rng.uniform(-1.0, 1.0);
        for (auto& v : c1) v = rng.uniform(-1.0, 1.0);
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ux = std::cos(theta), uy = std::sin(theta);
        const double half = 0.5 * (std::abs(ux) + std::abs(uy)) * res_;
        for (int y = 0; y < res_; ++y)
            for (int x = 0; x < res_; ++x) {
                const double t = 0.5 + ((x + 0.5 - 0.5 * res_) * ux + (y + 0.5 - 0.5 * res_) * uy) / (2.0 * half);
                std::array<double, 3> rgb{};
                for (std::size_t c = 0; c < 3; ++c) rgb[c] = (1.0 - t) * c0[c] + t * c1[c];
                put(px, y, x, rgb);
            }
    }

    void draw_rings(std::vector<float>& px, Rng& rng) const {
        std::array<double, 3> col{};
        for (auto& v : col) v = rng.uniform(-1.0, 1.0);
        const double cx = rng.uniform(0.3, 0.7) * res_, cy = rng.uniform(0.3, 0.7) * res_;
        const double freq = 2.0 * std::numbers::pi / (rng.uniform(0.15, 0.35) * res_);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int y = 0; y < res_; ++y)
            for (int x = 0; x < res_; ++x) {
                const double r = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
                const double k = std::cos(freq * r + phase);
                put(px, y, x, {col[0] * k, col[1] * k, col[2] * k});
            }
    }

    DatasetSpec spec_;
    int res_;
};

}  // namespace sg2m
