// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "sg2m/metrics.hpp"
#include "sg2m/training.hpp"

namespace sg2m {

struct LatentStats {
    Tensor mean;           // [1, D]
    double variance = 0.0;  // mean squared distance to the center
    int samples = 0;
};

/// Center and spread of mapped latents over `n` random z.
template <LatentGenerator G>
LatentStats estimate_latent_stats(const G& g, int n = 10000, std::uint64_t seed = 1, int batch = 256) {
    if (n < 2) throw ConfigError("estimate_latent_stats: need at least 2 samples");
    NoGradGuard ng;
    Rng rng(seed);
    std::vector<Tensor> ws;
    const int d = g.w_dim();
    std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
    for (int done = 0; done < n;) {
        const int b = std::min(batch, n - done);
        const Tensor w = g.mapping(Tensor::randn({b, g.z_dim()}, rng));
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += w[static_cast<std::size_t>(i * d + j)];
        ws.push_back(w);
        done += b;
    }
    for (auto& m : mu) m /= n;
    double var = 0.0;
    for (const auto& w : ws)
        for (int i = 0; i < w.dim(0); ++i)
            for (int j = 0; j < d; ++j) {
                const double e = w[static_cast<std::size_t>(i * d + j)] - mu[static_cast<std::size_t>(j)];
                var += e * e;
            }
    LatentStats s;
    s.mean = Tensor::from_data({1, d}, std::vector<float>(mu.begin(), mu.end()));
    s.variance = var / n;
    s.samples = n;
    return s;
}

/// Successive 2x2 means times 2, from the input down to 8x8 (the input itself
/// is not included). Maps of 8x8 or smaller have no levels.
inline std::vector<Tensor> noise_pyramid(const Tensor& map) {
    const int r = map.dim(-1);
    if (map.rank() < 2 || map.dim(-2) != r || r < 1 || (r & (r - 1)) != 0)
        throw ShapeError("noise_pyramid: expected a square power-of-two map, got " + shape_str(map.shape()));
    std::vector<Tensor> levels;
    Tensor v = map.rank() == 4 ? map : reshape(map, {1, 1, map.dim(-2), r});
    while (v.dim(-1) > 8) {
        v = scale(box_downsample2x(v), 2.0f);
        levels.push_back(map.rank() == 4 ? v : reshape(v, {v.dim(-2), v.dim(-1)}));
    }
    return levels;
}

/// Squared one-pixel autocorrelations, horizontally and vertically, with
/// wrap-around at the edges.
inline Tensor noise_reg_term(const Tensor& map) {
    if (map.rank() < 2 || map.dim(-1) != map.dim(-2))
        throw ShapeError("noise_reg_term: expected a square map, got " + shape_str(map.shape()));
    const Tensor h = mean(mul(map, roll(map, 1, -1)));
    const Tensor v = mean(mul(map, roll(map, 1, -2)));
    return add(square(h), square(v));
}

/// Sum of noise_reg_term over every map and each of its pyramid levels.
inline Tensor noise_regularization(const NoiseSet& noise) {
    Tensor total = Tensor::scalar(0.0f);
    for (const auto& n : noise) {
        total = add(total, noise_reg_term(n));
        for (const auto& level : noise_pyramid(n)) total = add(total, noise_reg_term(level));
    }
    return total;
}

struct ProjectionSchedule {
    int iterations = 1000;
    double lr_max = 0.1;
    int ramp_up = 50;
    int ramp_down = 250;
    int noise_phase = 750;
    double noise_scale = 0.05;
    double reg_weight = 1e5;

    void validate() const {
        if (iterations < 0 || ramp_up < 0 || ramp_down < 0 || noise_phase < 0)
            throw ConfigError("projection schedule: counts must be >= 0");
        if (ramp_up + ramp_down > iterations || noise_phase > iterations)
            throw ConfigError("projection schedule: phases exceed the iteration count");
        if (!(lr_max > 0.0)) throw ConfigError("projection schedule: lr_max must be positive");
    }

    /// Same phase proportions over a different iteration count.
    ProjectionSchedule with_iterations(int n) const {
        ProjectionSchedule s = *this;
        const double f = iterations > 0 ? static_cast<double>(n) / iterations : 0.0;
        s.iterations = n;
        s.ramp_up = static_cast<int>(std::lround(ramp_up * f));
        s.ramp_down = static_cast<int>(std::lround(ramp_down * f));
        s.noise_phase = static_cast<int>(std::lround(noise_phase * f));
        return s;
    }

    /// Linear ramp-up from 0, cosine ramp-down to 0 at the final step.
    double learning_rate(int step) const {
        const double up = ramp_up > 0 ? std::min(1.0, static_cast<double>(step) / ramp_up) : 1.0;
        const double left = static_cast<double>(iterations - step);
        const double down_frac = ramp_down > 0 ? std::clamp(left / ramp_down, 0.0, 1.0) : (left > 0 ? 1.0 : 0.0);
        const double down = 0.5 - 0.5 * std::cos(down_frac * std::numbers::pi);
        return lr_max * up * down;
    }

    /// Latent noise factor t: 1 at step 0, 0 from `noise_phase` onward.
    double noise_ramp(int step) const {
        return noise_phase > 0 ? std::max(0.0, 1.0 - static_cast<double>(step) / noise_phase) : 0.0;
    }
};

struct ProjectionResult {
    Tensor w;  // [1, D]
    NoiseSet noise;
    Tensor image;
    double distance = 0.0;  // metric(target, image) at w without latent noise
    std::vector<double> loss_trace;
};

/// Zero mean, unit (population) variance.
inline Tensor renormalize_noise(const Tensor& n) {
    std::vector<float> d = n.to_vector();
    double m = 0.0;
    for (float v : d) m += v;
    m /= static_cast<double>(d.size());
    double s2 = 0.0;
    for (float v : d) s2 += (v - m) * (v - m);
    const double inv = s2 > 0.0 ? 1.0 / std::sqrt(s2 / static_cast<double>(d.size())) : 1.0;
    for (float& v : d) v = static_cast<float>((v - m) * inv);
    return Tensor::from_data(n.shape(), std::move(d));
}

/// Optimizes a single broadcast latent and all noise maps so that the
/// generator reproduces `target` [1,C,r,r] under `metric`.
template <LatentGenerator G>
ProjectionResult project(const G& g, const Tensor& target, const LatentStats& stats, const ProjectionSchedule& sched,
                         const DistanceMetric& metric, std::uint64_t seed = 1) {
    sched.validate();
    Rng rng(seed);
    ParameterSet ps;
    ps.add("w", stats.mean);
    const NoiseSet init_noise = g.random_noise(1, rng);
    for (std::size_t i = 0; i < init_noise.size(); ++i) ps.add("noise" + std::to_string(i), init_noise[i]);
    const int nn = static_cast<int>(init_noise.size());
    auto noise_of = [&] {
        NoiseSet n;
        for (int i = 0; i < nn; ++i) n.push_back(ps[1 + i].value);
        return n;
    };
    {
        NoGradGuard ng;
        const Tensor probe = g.synthesize(broadcast_ws(stats.mean, g.num_ws()), init_noise);
        if (probe.shape() != target.shape())
            throw ShapeError("project: target " + shape_str(target.shape()) + " does not match generator output " +
                             shape_str(probe.shape()));
    }

    const double sigma_w = std::sqrt(stats.variance);
    Adam opt;
    ProjectionResult res;
    for (int step = 0; step < sched.iterations; ++step) {
        const double t = sched.noise_ramp(step);
        const float wstd = static_cast<float>(sched.noise_scale * sigma_w * t * t);
        const Tensor w = ps[0].value;
        const Tensor w_noisy = add(w, scale(Tensor::randn(w.shape(), rng), wstd));
        const NoiseSet noise = noise_of();
        const Tensor img = g.synthesize(broadcast_ws(w_noisy, g.num_ws()), noise);
        const Tensor dist = mean(metric.distance(target, img));
        const Tensor loss = add(dist, scale(noise_regularization(noise), static_cast<float>(sched.reg_weight)));
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw NumericError("projection diverged at step " + std::to_string(step));
        res.loss_trace.push_back(lv);
        const auto grads = grad(loss, ps.values(), false, true);
        opt.step(ps, grads, AdamHyper{sched.learning_rate(step), 0.9, 0.999, 1e-8});
        for (int i = 0; i < nn; ++i) ps.set(1 + i, renormalize_noise(ps[1 + i].value));
    }

    NoGradGuard ng;
    res.w = ps[0].value.detach();
    for (const auto& n : noise_of()) res.noise.push_back(n.detach());
    res.image = g.synthesize(broadcast_ws(res.w, g.num_ws()), res.noise);
    res.distance = mean(metric.distance(target, res.image)).item();
    return res;
}

}  // namespace sg2m
