// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include "sg2m/modconv.hpp"
#include "sg2m/params.hpp"

namespace sg2m {

enum class Variant { feedforward, skip, residual };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::feedforward: return "feedforward";
        case Variant::skip: return "skip";
        case Variant::residual: return "residual";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "feedforward") return Variant::feedforward;
    if (s == "skip") return Variant::skip;
    if (s == "residual") return Variant::residual;
    throw ConfigError("unknown network variant '" + s + "' (feedforward|skip|residual)");
}

struct NetworkConfig {
    int resolution = 32;
    int z_dim = 64;
    int w_dim = 64;
    int mapping_layers = 4;
    float mapping_lr_mul = 0.01f;
    int channel_base = 16;  // channels at the output resolution
    int channel_max = 128;
    int channel_mult = 1;  // extra width factor for large resolutions
    int channel_mult_min_res = 64;
    Variant g_variant = Variant::skip;
    Variant d_variant = Variant::residual;
    int mbstd_group = 4;
    int img_channels = 3;
    float lrelu_alpha = 0.2f;

    int levels() const { return static_cast<int>(std::lround(std::log2(resolution))); }

    /// Feature maps at resolution `res`.
    int channels_at(int res) const {
        const int k = static_cast<int>(std::lround(std::log2(res)));
        const long c = std::min<long>(static_cast<long>(channel_base) << (levels() - k), channel_max);
        return static_cast<int>(c) * (res >= channel_mult_min_res ? channel_mult : 1);
    }
    /// Style-modulated synthesis convolutions.
    int num_convs() const { return 2 * (levels() - 2) + 1; }
    /// Per-layer latent inputs: one per conv plus the final tRGB.
    int num_ws() const { return num_convs() + 1; }

    void validate() const {
        if (resolution < 8 || (resolution & (resolution - 1)) != 0)
            throw ConfigError("resolution must be a power of two >= 8, got " + std::to_string(resolution));
        if (z_dim < 1 || w_dim < 1) throw ConfigError("latent dimensions must be >= 1");
        if (mapping_layers < 0) throw ConfigError("mapping_layers must be >= 0");
        if (mapping_layers == 0 && z_dim != w_dim) throw ConfigError("mapping_layers = 0 requires z_dim == w_dim");
        if (channel_base < 1 || channel_max < 1 || channel_mult < 1) throw ConfigError("channel counts must be >= 1");
        if (mbstd_group < 1) throw ConfigError("mbstd_group must be >= 1");
        if (img_channels < 1) throw ConfigError("img_channels must be >= 1");
        if (!(mapping_lr_mul > 0.0f)) throw ConfigError("mapping_lr_mul must be positive");
        if (!(lrelu_alpha > 0.0f && lrelu_alpha < 1.0f)) throw ConfigError("lrelu_alpha must lie in (0,1)");
    }
};

/// One noise map per synthesis conv, each [1 or N, 1, res, res].
using NoiseSet = std::vector<Tensor>;

namespace layers {

struct Dense {
    int weight = -1, bias = -1;
};

/// Fully connected layer with equalized learning rate. Stored weights are
/// N(0, 1/lr_mul^2); runtime gain lr_mul/sqrt(fan_in).
inline Dense make_dense(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, float lr_mul = 1.0f,
                        float bias_init = 0.0f, bool bias = true) {
    Dense d;
    d.weight = ps.add(name + ".weight", scale(Tensor::randn({in, out}, rng), 1.0f / lr_mul),
                      lr_mul / std::sqrt(static_cast<float>(in)));
    if (bias) d.bias = ps.add(name + ".bias", Tensor::full({out}, bias_init / lr_mul), lr_mul);
    return d;
}

inline Tensor dense(const ParameterSet& ps, const Dense& d, const Tensor& x) {
    Tensor y = matmul(x, ps.runtime(d.weight));
    return d.bias >= 0 ? add(y, ps.runtime(d.bias)) : y;
}

struct Conv {
    int weight = -1, bias = -1;
};

inline Conv make_conv(ParameterSet& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
                      bool bias = true) {
    Conv c;
    c.weight = ps.add(name + ".weight", Tensor::randn({cout, cin, k, k}, rng),
                      1.0f / std::sqrt(static_cast<float>(cin * k * k)));
    if (bias) c.bias = ps.add(name + ".bias", Tensor::zeros({cout}));
    return c;
}

inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) { return add(x, reshape(b, {1, b.dim(0), 1, 1})); }

inline Tensor conv(const ParameterSet& ps, const Conv& c, const Tensor& x) {
    Tensor y = conv2d(x, ps.runtime(c.weight), 1);
    return c.bias >= 0 ? add_channel_bias(y, ps.runtime(c.bias)) : y;
}

struct StyleConv {
    Dense affine;
    int weight = -1, bias = -1, noise_strength = -1;
    bool up = false, demod = true, activate = true;
    int res = 4;
};

inline StyleConv make_style_conv(ParameterSet& ps, const std::string& name, int w_dim, int cin, int cout, int k,
                                 bool up, int res, Rng& rng) {
    StyleConv s;
    s.affine = make_dense(ps, name + ".affine", w_dim, cin, rng, 1.0f, 1.0f);
    s.weight = ps.add(name + ".weight", Tensor::randn({cout, cin, k, k}, rng),
                      1.0f / std::sqrt(static_cast<float>(cin * k * k)));
    s.noise_strength = ps.add(name + ".noise_strength", Tensor::zeros({1}));
    s.bias = ps.add(name + ".bias", Tensor::zeros({cout}));
    s.up = up;
    s.res = res;
    return s;
}

inline StyleConv make_to_rgb(ParameterSet& ps, const std::string& name, int w_dim, int cin, int channels, int res,
                             Rng& rng) {
    StyleConv s;
    s.affine = make_dense(ps, name + ".affine", w_dim, cin, rng, 1.0f, 1.0f);
    s.weight = ps.add(name + ".weight", Tensor::randn({channels, cin, 1, 1}, rng),
                      1.0f / std::sqrt(static_cast<float>(cin)));
    s.bias = ps.add(name + ".bias", Tensor::zeros({channels}));
    s.demod = false;
    s.activate = false;
    s.res = res;
    return s;
}

inline Tensor style_conv(const ParameterSet& ps, const StyleConv& s, const Tensor& x, const Tensor& w,
                         const Tensor& noise, float alpha) {
    const Tensor styles = dense(ps, s.affine, w);
    Tensor y = modulated_conv2d(s.up ? upsample2x(x) : x, ps.runtime(s.weight), styles, s.demod);
    if (s.noise_strength >= 0 && noise.defined()) {
        const Shape& ns = noise.shape();
        if (ns.size() != 4 || ns[1] != 1 || ns[2] != s.res || ns[3] != s.res || (ns[0] != 1 && ns[0] != y.dim(0)))
            throw ShapeError("noise map " + shape_str(ns) + " does not fit a " + std::to_string(s.res) + "x" +
                             std::to_string(s.res) + " layer with batch " + std::to_string(y.dim(0)));
        y = add(y, mul(noise, ps.runtime(s.noise_strength)));
    }
    y = add_channel_bias(y, ps.runtime(s.bias));
    return s.activate ? leaky_relu_scaled(y, alpha) : y;
}

}  // namespace layers

/// Per-group standard deviation over the batch, averaged over channels and
/// pixels, appended as one extra feature map. Sample n belongs to group
/// n % (N / G).
inline Tensor minibatch_stddev(const Tensor& x, int group_size) {
    if (x.rank() != 4) throw ShapeError("minibatch_stddev: expected [N,C,H,W], got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int g = std::min(std::max(group_size, 1), n);
    if (n % g != 0) g = n;
    const int m = n / g;
    const Tensor grouped = reshape(x, {g, m, c, h, w});
    const Tensor centered = sub(grouped, mean(grouped, {0}, true));
    const Tensor sd = sqrt(mean(square(centered), {0}, true));  // [1,m,c,h,w]
    const Tensor feat = mean(sd, {2, 3, 4}, true);                // [1,m,1,1,1]
    const Tensor tiled = reshape(broadcast_to(feat, {g, m, 1, h, w}), {n, 1, h, w});
    return concat({x, tiled}, 1);
}

/// Anything that maps per-layer latents [N,L,D] (plus noise) to images.
template <class G>
concept SynthesisModel = requires(const G& g, const Tensor& ws, const NoiseSet& noise) {
    { g.synthesize(ws, noise) } -> std::convertible_to<Tensor>;
    { g.num_ws() } -> std::convertible_to<int>;
    { g.w_dim() } -> std::convertible_to<int>;
};

/// Broadcasts one latent per sample [N,D] to every layer [N,L,D].
inline Tensor broadcast_ws(const Tensor& w, int num_ws) {
    if (w.rank() != 2) throw ShapeError("broadcast_ws: expected [N,D], got " + shape_str(w.shape()));
    return broadcast_to(reshape(w, {w.dim(0), 1, w.dim(1)}), {w.dim(0), num_ws, w.dim(1)});
}

/// Latent of layer i, [N,D].
inline Tensor layer_w(const Tensor& ws, int i) { return reshape(slice(ws, 1, i, 1), {ws.dim(0), ws.dim(2)}); }

struct SynthesisOutput {
    Tensor image;
    std::vector<Tensor> rgb;  // tRGB outputs at their native resolutions
    std::vector<int> rgb_res;
};

class Generator {
public:
    Generator() = default;
    Generator(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        const int wd = cfg_.w_dim;
        for (int i = 0; i < cfg_.mapping_layers; ++i)
            mapping_.push_back(layers::make_dense(ps_, "mapping." + std::to_string(i), i == 0 ? cfg_.z_dim : wd, wd,
                                                  rng, cfg_.mapping_lr_mul));
        const int c4 = cfg_.channels_at(4);
        const_input_ = ps_.add("synthesis.const", Tensor::randn({c4, 4, 4}, rng));
        for (int res = 4; res <= cfg_.resolution; res *= 2) {
            const std::string p = "synthesis.b" + std::to_string(res);
            const int cout = cfg_.channels_at(res);
            if (res == 4) {
                convs_.push_back(layers::make_style_conv(ps_, p + ".conv1", wd, c4, c4, 3, false, 4, rng));
            } else {
                const int cin = cfg_.channels_at(res / 2);
                convs_.push_back(layers::make_style_conv(ps_, p + ".conv0", wd, cin, cout, 3, true, res, rng));
                convs_.push_back(layers::make_style_conv(ps_, p + ".conv1", wd, cout, cout, 3, false, res, rng));
                if (cfg_.g_variant == Variant::residual)
                    skips_.push_back(layers::make_conv(ps_, p + ".skip", cin, cout, 1, rng, false));
            }
            if (cfg_.g_variant == Variant::skip || res == cfg_.resolution) {
                to_rgb_.push_back(layers::make_to_rgb(ps_, p + ".torgb", wd, cout, cfg_.img_channels, res, rng));
            }
        }
    }

    const NetworkConfig& config() const { return cfg_; }
    int num_ws() const { return cfg_.num_ws(); }
    int w_dim() const { return cfg_.w_dim; }
    int z_dim() const { return cfg_.z_dim; }
    int resolution() const { return cfg_.resolution; }
    ParameterSet& params() { return ps_; }
    const ParameterSet& params() const { return ps_; }

    Generator frozen() const {
        Generator g = *this;
        g.ps_.freeze();
        return g;
    }

    /// Resolution of each synthesis conv's noise input.
    std::vector<int> noise_resolutions() const {
        std::vector<int> r;
        for (const auto& c : convs_) r.push_back(c.res);
        return r;
    }

    NoiseSet random_noise(int batch, Rng& rng) const {
        NoiseSet n;
        for (int r : noise_resolutions()) n.push_back(Tensor::randn({batch, 1, r, r}, rng));
        return n;
    }

    Tensor mapping(const Tensor& z) const {
        if (z.rank() != 2 || z.dim(1) != cfg_.z_dim)
            throw ShapeError("mapping: expected [N," + std::to_string(cfg_.z_dim) + "], got " + shape_str(z.shape()));
        if (mapping_.empty()) return z;
        Tensor x = mul(z, rsqrt(add_scalar(mean(square(z), {1}, true), 1e-8f)));
        for (const auto& d : mapping_) x = leaky_relu_scaled(layers::dense(ps_, d, x), cfg_.lrelu_alpha);
        return x;
    }

    SynthesisOutput synthesize_full(const Tensor& ws, const NoiseSet& noise) const {
        if (ws.rank() != 3 || ws.dim(1) != num_ws() || ws.dim(2) != cfg_.w_dim)
            throw ShapeError("synthesis: expected ws [N," + std::to_string(num_ws()) + "," +
                             std::to_string(cfg_.w_dim) + "], got " + shape_str(ws.shape()));
        if (noise.size() != convs_.size())
            throw ShapeError("synthesis: " + std::to_string(noise.size()) + " noise maps for " +
                             std::to_string(convs_.size()) + " layers");
        const int n = ws.dim(0);
        const float a = cfg_.lrelu_alpha;
        const Tensor c = ps_.runtime(const_input_);
        Tensor x = broadcast_to(reshape(c, {1, c.dim(0), 4, 4}), {n, c.dim(0), 4, 4});
        SynthesisOutput out;
        std::size_t ci = 0, ri = 0, si = 0;
        for (int res = 4; res <= cfg_.resolution; res *= 2) {
            if (res == 4) {
                x = layers::style_conv(ps_, convs_[ci], x, layer_w(ws, static_cast<int>(ci)), noise[ci], a);
                ++ci;
            } else {
                Tensor skip;
                if (cfg_.g_variant == Variant::residual) skip = layers::conv(ps_, skips_[si++], upsample2x(x));
                for (int j = 0; j < 2; ++j, ++ci)
                    x = layers::style_conv(ps_, convs_[ci], x, layer_w(ws, static_cast<int>(ci)), noise[ci], a);
                if (skip.defined()) x = scale(add(x, skip), static_cast<float>(1.0 / std::sqrt(2.0)));
            }
            if (cfg_.g_variant == Variant::skip || res == cfg_.resolution) {
                const Tensor y =
                    layers::style_conv(ps_, to_rgb_[ri++], x, layer_w(ws, static_cast<int>(ci)), Tensor(), a);
                out.rgb.push_back(y);
                out.rgb_res.push_back(res);
                out.image = out.image.defined() ? add(upsample2x(out.image), y) : y;
            }
        }
        return out;
    }

    Tensor synthesize(const Tensor& ws, const NoiseSet& noise) const { return synthesize_full(ws, noise).image; }

    /// z -> image with fresh noise.
    Tensor generate(const Tensor& z, Rng& rng) const {
        return synthesize(broadcast_ws(mapping(z), num_ws()), random_noise(z.dim(0), rng));
    }

private:
    NetworkConfig cfg_;
    ParameterSet ps_;
    std::vector<layers::Dense> mapping_;
    int const_input_ = -1;
    std::vector<layers::StyleConv> convs_;
    std::vector<layers::StyleConv> to_rgb_;
    std::vector<layers::Conv> skips_;
};

class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        const int img = cfg_.img_channels;
        for (int res = cfg_.resolution; res >= 8; res /= 2) {
            const std::string p = "disc.b" + std::to_string(res);
            const int c = cfg_.channels_at(res), c2 = cfg_.channels_at(res / 2);
            Block b;
            if (res == cfg_.resolution || cfg_.d_variant == Variant::skip)
                b.from_rgb = layers::make_conv(ps_, p + ".fromrgb", img, c, 1, rng);
            b.conv0 = layers::make_conv(ps_, p + ".conv0", c, c, 3, rng);
            b.conv1 = layers::make_conv(ps_, p + ".conv1", c, c2, 3, rng);
            if (cfg_.d_variant == Variant::residual) b.skip = layers::make_conv(ps_, p + ".skip", c, c2, 1, rng, false);
            blocks_.push_back(b);
        }
        const int c4 = cfg_.channels_at(4);
        if (cfg_.d_variant == Variant::skip) from_rgb4_ = layers::make_conv(ps_, "disc.b4.fromrgb", img, c4, 1, rng);
        conv4_ = layers::make_conv(ps_, "disc.b4.conv", c4 + 1, c4, 3, rng);
        fc_ = layers::make_dense(ps_, "disc.b4.fc", c4 * 16, c4, rng);
        out_ = layers::make_dense(ps_, "disc.b4.out", c4, 1, rng);
    }

    const NetworkConfig& config() const { return cfg_; }
    ParameterSet& params() { return ps_; }
    const ParameterSet& params() const { return ps_; }

    /// Copy whose weights are constants; gradients still flow to the input.
    Discriminator frozen() const {
        Discriminator d = *this;
        d.ps_.freeze();
        return d;
    }

    Tensor forward(const Tensor& image) const {
        const int r = cfg_.resolution;
        if (image.rank() != 4 || image.dim(1) != cfg_.img_channels || image.dim(2) != r || image.dim(3) != r)
            throw ShapeError("discriminator: expected [N," + std::to_string(cfg_.img_channels) + "," +
                             std::to_string(r) + "," + std::to_string(r) + "], got " + shape_str(image.shape()));
        const float a = cfg_.lrelu_alpha;
        const float inv_sqrt2 = static_cast<float>(1.0 / std::sqrt(2.0));
        Tensor x, img = image;
        for (const auto& b : blocks_) {
            if (b.from_rgb.weight >= 0) {
                const Tensor f = leaky_relu_scaled(layers::conv(ps_, b.from_rgb, img), a);
                x = x.defined() ? add(x, f) : f;
            }
            Tensor t = leaky_relu_scaled(layers::conv(ps_, b.conv0, x), a);
            t = downsample2x(leaky_relu_scaled(layers::conv(ps_, b.conv1, t), a));
            if (b.skip.weight >= 0) t = scale(add(t, layers::conv(ps_, b.skip, downsample2x(x))), inv_sqrt2);
            x = t;
            if (cfg_.d_variant == Variant::skip) img = downsample2x(img);
        }
        if (from_rgb4_.weight >= 0) x = add(x, leaky_relu_scaled(layers::conv(ps_, from_rgb4_, img), a));
        x = minibatch_stddev(x, cfg_.mbstd_group);
        x = leaky_relu_scaled(layers::conv(ps_, conv4_, x), a);
        x = reshape(x, {x.dim(0), -1});
        x = leaky_relu_scaled(layers::dense(ps_, fc_, x), a);
        return layers::dense(ps_, out_, x);
    }

private:
    struct Block {
        layers::Conv from_rgb, conv0, conv1, skip;
    };
    NetworkConfig cfg_;
    ParameterSet ps_;
    std::vector<Block> blocks_;
    layers::Conv from_rgb4_, conv4_;
    layers::Dense fc_, out_;
};

/// Closed-form scalar parameter counts {generator, discriminator}.
inline std::pair<std::size_t, std::size_t> parameter_count(const NetworkConfig& cfg) {
    using S = std::size_t;
    const S wd = static_cast<S>(cfg.w_dim), img = static_cast<S>(cfg.img_channels);
    auto ch = [&](int res) { return static_cast<S>(cfg.channels_at(res)); };
    auto style_conv = [&](S cin, S cout, S k) { return wd * cin + cin + cout * cin * k * k + 1 + cout; };
    auto to_rgb = [&](S cin) { return wd * cin + cin + img * cin + img; };

    S g = 0;
    for (int i = 0; i < cfg.mapping_layers; ++i) g += (i == 0 ? static_cast<S>(cfg.z_dim) : wd) * wd + wd;
    g += ch(4) * 16;
    for (int res = 4; res <= cfg.resolution; res *= 2) {
        if (res == 4) {
            g += style_conv(ch(4), ch(4), 3);
        } else {
            g += style_conv(ch(res / 2), ch(res), 3) + style_conv(ch(res), ch(res), 3);
            if (cfg.g_variant == Variant::residual) g += ch(res / 2) * ch(res);
        }
        if (cfg.g_variant == Variant::skip || res == cfg.resolution) g += to_rgb(ch(res));
    }

    S d = 0;
    for (int res = cfg.resolution; res >= 8; res /= 2) {
        const S c = ch(res), c2 = ch(res / 2);
        if (res == cfg.resolution || cfg.d_variant == Variant::skip) d += img * c + c;
        d += c * c * 9 + c + c * c2 * 9 + c2;
        if (cfg.d_variant == Variant::residual) d += c * c2;
    }
    const S c4 = ch(4);
    if (cfg.d_variant == Variant::skip) d += img * c4 + c4;
    d += (c4 + 1) * c4 * 9 + c4 + c4 * 16 * c4 + c4 + c4 + 1;
    return {g, d};
}

}  // namespace sg2m
