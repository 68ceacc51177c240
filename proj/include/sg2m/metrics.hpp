// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "sg2m/autograd.hpp"
#include "sg2m/networks.hpp"

namespace sg2m {

/// Image distance, one value per sample. Must be differentiable (projection
/// optimizes through it), symmetric, non-negative and zero on identical inputs.
class DistanceMetric {
public:
    virtual ~DistanceMetric() = default;
    virtual std::string name() const = 0;
    virtual Tensor distance(const Tensor& a, const Tensor& b) const = 0;
};

using MetricPtr = std::shared_ptr<const DistanceMetric>;

/// Mean squared pixel difference, after box-downsampling images larger than
/// `max_res` (0 keeps the input size). Accepts any [N, ...] shape.
class PixelL2Distance final : public DistanceMetric {
public:
    explicit PixelL2Distance(int max_res = 0) : max_res_(max_res) {}
    std::string name() const override { return max_res_ > 0 ? "pixel_l2@" + std::to_string(max_res_) : "pixel_l2"; }
    Tensor distance(const Tensor& a, const Tensor& b) const override {
        if (a.shape() != b.shape())
            throw ShapeError("pixel_l2: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
        Tensor d = sub(a, b);
        if (max_res_ > 0 && d.rank() == 4)
            while (d.dim(2) > max_res_) d = box_downsample2x(d);
        return mean(square(reshape(d, {d.dim(0), -1})), {1});
    }

private:
    int max_res_;
};

/// Feature distance through a fixed random conv stack: each stage is a 3x3
/// conv, scaled leaky ReLU and 2x box downsampling. Features are unit-normalized
/// along channels per pixel; the distance sums the mean squared feature
/// difference of every stage.
class RandomProjectionDistance final : public DistanceMetric {
public:
    explicit RandomProjectionDistance(int in_channels = 3, int width = 16, int stages = 3, std::uint64_t seed = 0x5eed)
        : seed_(seed) {
        Rng rng(seed);
        int cin = in_channels;
        for (int s = 0; s < stages; ++s) {
            const float g = 1.0f / std::sqrt(static_cast<float>(cin * 9));
            weights_.push_back(scale(Tensor::randn({width, cin, 3, 3}, rng), g));
            cin = width;
        }
    }
    std::string name() const override {
        return "random_projection(seed=" + std::to_string(seed_) + ",stages=" + std::to_string(weights_.size()) + ")";
    }
    Tensor distance(const Tensor& a, const Tensor& b) const override {
        if (a.shape() != b.shape() || a.rank() != 4)
            throw ShapeError("random_projection: expected matching [N,C,H,W] images");
        Tensor fa = a, fb = b, total;
        for (const auto& w : weights_) {
            fa = leaky_relu_scaled(conv2d(fa, w, 1));
            fb = leaky_relu_scaled(conv2d(fb, w, 1));
            const Tensor d = sub(normalize(fa), normalize(fb));
            const Tensor term = mean(sum(square(d), {1}), {1, 2});
            total = total.defined() ? add(total, term) : term;
            if (fa.dim(2) >= 2 && fa.dim(2) % 2 == 0) {
                fa = box_downsample2x(fa);
                fb = box_downsample2x(fb);
            }
        }
        return total;
    }

private:
    static Tensor normalize(const Tensor& f) { return mul(f, rsqrt(add_scalar(sum(square(f), {1}, true), 1e-10f))); }
    std::vector<Tensor> weights_;
    std::uint64_t seed_;
};

/// `factor` times another metric.
class ScaledDistance final : public DistanceMetric {
public:
    ScaledDistance(MetricPtr base, float factor) : base_(std::move(base)), factor_(factor) {}
    std::string name() const override { return std::to_string(factor_) + "*" + base_->name(); }
    Tensor distance(const Tensor& a, const Tensor& b) const override { return scale(base_->distance(a, b), factor_); }

private:
    MetricPtr base_;
    float factor_;
};

inline MetricPtr make_metric(const std::string& id, int img_channels = 3) {
    if (id == "pixel_l2") return std::make_shared<PixelL2Distance>();
    if (id == "random_projection") return std::make_shared<RandomProjectionDistance>(img_channels);
    throw ConfigError("unknown distance metric '" + id + "' (pixel_l2|random_projection)");
}

/// A generator with a latent mapping; satisfied by Generator and by test rigs.
template <class G>
concept LatentGenerator = SynthesisModel<G> && requires(const G& g, const Tensor& z, int n, Rng& rng) {
    { g.mapping(z) } -> std::convertible_to<Tensor>;
    { g.random_noise(n, rng) } -> std::convertible_to<NoiseSet>;
    { g.z_dim() } -> std::convertible_to<int>;
};

struct PplReport {
    std::vector<double> scores;
    double mean = 0.0;
    double p10 = 0.0, p50 = 0.0, p90 = 0.0;
    std::vector<double> bin_edges;  // histogram over [min, max]
    std::vector<int> bin_counts;
};

/// Linear-interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline PplReport summarize_scores(std::vector<double> scores, int bins = 20) {
    PplReport r;
    r.scores = std::move(scores);
    if (r.scores.empty()) return r;
    double s = 0.0;
    for (double v : r.scores) s += v;
    r.mean = s / static_cast<double>(r.scores.size());
    r.p10 = percentile(r.scores, 10);
    r.p50 = percentile(r.scores, 50);
    r.p90 = percentile(r.scores, 90);
    const auto [mn, mx] = std::minmax_element(r.scores.begin(), r.scores.end());
    const double lo = *mn, hi = *mx > *mn ? *mx : *mn + 1.0;
    for (int i = 0; i <= bins; ++i) r.bin_edges.push_back(lo + (hi - lo) * i / bins);
    r.bin_counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : r.scores) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++r.bin_counts[static_cast<std::size_t>(b)];
    }
    return r;
}

struct PplOptions {
    int samples = 1000;
    double epsilon = 1e-4;
    int batch = 16;
    std::uint64_t seed = 1;
};

/// Perceptual path length in W: d(g(w1), g(lerp(w1, w2, eps))) / eps^2 with
/// w1, w2 mapped from independent z and the same noise for both images.
template <LatentGenerator G>
PplReport ppl(const G& g, const DistanceMetric& metric, const PplOptions& opt) {
    if (!(opt.epsilon > 0.0)) throw ConfigError("ppl: epsilon must be positive");
    NoGradGuard ng;
    Rng rng(opt.seed);
    std::vector<double> scores;
    for (int done = 0; done < opt.samples;) {
        const int n = std::min(opt.batch, opt.samples - done);
        const Tensor w1 = g.mapping(Tensor::randn({n, g.z_dim()}, rng));
        const Tensor w2 = g.mapping(Tensor::randn({n, g.z_dim()}, rng));
        const NoiseSet noise = g.random_noise(n, rng);
        const Tensor wt = lerp(w1, w2, static_cast<float>(opt.epsilon));
        const Tensor a = g.synthesize(broadcast_ws(w1, g.num_ws()), noise);
        const Tensor b = g.synthesize(broadcast_ws(wt, g.num_ws()), noise);
        const Tensor d = metric.distance(a, b);
        for (float v : d.data()) scores.push_back(static_cast<double>(v) / (opt.epsilon * opt.epsilon));
        done += n;
    }
    return summarize_scores(std::move(scores));
}

/// Normalizes per-layer standard deviations to percentages summing to 100.
inline std::vector<double> usage_percentages(const std::vector<double>& stds) {
    double total = 0.0;
    for (double s : stds) total += s;
    std::vector<double> p;
    for (double s : stds) p.push_back(total > 0.0 ? 100.0 * s / total : 100.0 / static_cast<double>(stds.size()));
    return p;
}

struct ResolutionUsage {
    std::vector<int> resolutions;
    std::vector<double> stddev;
    std::vector<double> percent;
};

/// Standard deviation of each tRGB contribution after upsampling to the output
/// resolution, over samples, channels and pixels (skip generators only).
inline ResolutionUsage resolution_usage(const Generator& g, int samples = 1024, std::uint64_t seed = 1,
                                        int batch = 32) {
    if (g.config().g_variant != Variant::skip) throw ConfigError("resolution_usage requires a skip generator");
    NoGradGuard ng;
    Rng rng(seed);
    ResolutionUsage u;
    std::vector<double> sum, sum2;
    double count = 0.0;
    for (int done = 0; done < samples;) {
        const int n = std::min(batch, samples - done);
        const Tensor ws = broadcast_ws(g.mapping(Tensor::randn({n, g.z_dim()}, rng)), g.num_ws());
        const SynthesisOutput out = g.synthesize_full(ws, g.random_noise(n, rng));
        if (u.resolutions.empty()) {
            u.resolutions = out.rgb_res;
            sum.assign(out.rgb.size(), 0.0);
            sum2.assign(out.rgb.size(), 0.0);
        }
        for (std::size_t k = 0; k < out.rgb.size(); ++k) {
            Tensor up = out.rgb[k];
            while (up.dim(2) < g.resolution()) up = upsample2x(up);
            for (float v : up.data()) {
                sum[k] += v;
                sum2[k] += static_cast<double>(v) * v;
            }
        }
        count += static_cast<double>(out.image.numel());
        done += n;
    }
    for (std::size_t k = 0; k < sum.size(); ++k) {
        const double m = sum[k] / count;
        u.stddev.push_back(std::sqrt(std::max(0.0, sum2[k] / count - m * m)));
    }
    u.percent = usage_percentages(u.stddev);
    return u;
}

using JacobianMatrix = Eigen::MatrixXd;

/// d synth(broadcast w) / d w at a single latent w [1,D]: rows are output
/// elements, columns latent components. Rows are obtained in batches of
/// backward passes over replicated copies of w.
template <class SynthFn>
JacobianMatrix jacobian(const SynthFn& synth, const Tensor& w, int num_ws, int rows_per_pass = 64) {
    if (w.rank() != 2 || w.dim(0) != 1) throw ShapeError("jacobian: expected w of shape [1,D]");
    const int d = w.dim(1);
    Tensor probe;
    {
        NoGradGuard ng;
        probe = synth(broadcast_ws(w, num_ws));
    }
    const int m = static_cast<int>(probe.numel());
    if (static_cast<double>(m) * d > 1e6)
        throw ConfigError("jacobian: " + std::to_string(m) + "x" + std::to_string(d) + " exceeds 1e6 entries");
    JacobianMatrix j(m, d);
    for (int start = 0; start < m; start += rows_per_pass) {
        const int b = std::min(rows_per_pass, m - start);
        const Tensor wb = broadcast_to(w, {b, d}).detach().variable();
        const Tensor out = reshape(synth(broadcast_ws(wb, num_ws)), {b, m});
        std::vector<float> sel(static_cast<std::size_t>(b) * m, 0.0f);
        for (int i = 0; i < b; ++i) sel[static_cast<std::size_t>(i) * m + start + i] = 1.0f;
        const Tensor gw = grad(sum(mul(out, Tensor::from_data({b, m}, sel))), {wb}, false, true)[0];
        for (int i = 0; i < b; ++i)
            for (int c = 0; c < d; ++c) j(start + i, c) = gw[static_cast<std::size_t>(i) * d + c];
    }
    return j;
}

struct ConditioningReport {
    std::vector<double> singular_values;  // descending
    double ratio = 0.0;                   // sigma_max / sigma_min
    double coeff_of_variation = 0.0;
};

inline ConditioningReport conditioning(const JacobianMatrix& j) {
    Eigen::BDCSVD<JacobianMatrix> svd(j);
    ConditioningReport r;
    const auto& s = svd.singularValues();
    double mean = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        r.singular_values.push_back(s(i));
        mean += s(i);
    }
    if (s.size() == 0) return r;
    mean /= static_cast<double>(s.size());
    double var = 0.0;
    for (double v : r.singular_values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(s.size());
    r.ratio = r.singular_values.back() > 0.0 ? r.singular_values.front() / r.singular_values.back()
                                             : std::numeric_limits<double>::infinity();
    r.coeff_of_variation = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
    return r;
}

/// Conditioning of the generator Jacobian at `points` latents mapped from
/// random z, each with its own fixed noise.
template <LatentGenerator G>
std::vector<ConditioningReport> jacobian_conditioning(const G& g, int points, std::uint64_t seed = 1) {
    Rng rng(seed);
    std::vector<ConditioningReport> out;
    for (int p = 0; p < points; ++p) {
        Tensor w;
        {
            NoGradGuard ng;
            w = g.mapping(Tensor::randn({1, g.z_dim()}, rng));
        }
        const NoiseSet noise = g.random_noise(1, rng);
        auto synth = [&](const Tensor& ws) { return g.synthesize(ws, noise); };
        out.push_back(conditioning(jacobian(synth, w.detach(), g.num_ws())));
    }
    return out;
}

}  // namespace sg2m
