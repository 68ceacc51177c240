// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sg2m/autograd.hpp"
#include "sg2m/networks.hpp"

namespace sg2m {

struct LogisticLosses {
    Tensor loss_d;
    Tensor loss_g;
};

/// Non-saturating logistic losses: D minimizes softplus(fake) + softplus(-real),
/// G minimizes softplus(-fake).
inline LogisticLosses logistic_losses(const Tensor& real_scores, const Tensor& fake_scores) {
    return {add(mean(softplus(fake_scores)), mean(softplus(neg(real_scores)))), mean(softplus(neg(fake_scores)))};
}

/// Squared L2 norm of each sample's slice, [N].
inline Tensor per_sample_sq_norm(const Tensor& g) {
    return sum(square(reshape(g, {g.dim(0), -1})), {1});
}

/// (gamma/2) * mean_n ||dD(x_n)/dx_n||^2. Differentiable w.r.t. the
/// discriminator's weights.
template <class ScoreFn>
Tensor r1_penalty(const ScoreFn& d, const Tensor& real, float gamma) {
    const Tensor x = real.detach().variable();
    const Tensor scores = d(x);
    const auto g = grad(sum(scores), {x}, true, true);
    return scale(mean(per_sample_sq_norm(g[0])), 0.5f * gamma);
}

/// Path-length weight for output resolution r: ln2 / (r^2 (ln r - ln 2)).
inline double gamma_pl(double r) {
    if (!(r > 2.0)) throw ConfigError("gamma_pl: resolution must exceed 2");
    return std::log(2.0) / (r * r * (std::log(r) - std::log(2.0)));
}

struct PathLengthState {
    double a = 0.0;  // running mean of the Jacobian-vector norm
    double decay = 0.99;
};

struct PathLengthResult {
    Tensor penalty;
    Tensor lengths;  // per sample
    double mean_length = 0.0;
};

/// weight * mean_n (l_n - a)^2 with l_n = ||J_w^T y||, y ~ N(0, I) / sqrt(pixels).
/// `ws` is [N, L, D]; the norm is taken per layer and averaged over layers
/// in the squared domain. The running mean is updated before the penalty is
/// formed.
template <class SynthFn>
PathLengthResult path_length_penalty(const SynthFn& synth, const Tensor& ws, PathLengthState& state, double weight,
                                     Rng& rng) {
    if (ws.rank() != 3) throw ShapeError("path_length_penalty: ws must be [N,L,D], got " + shape_str(ws.shape()));
    const Tensor w = ws.requires_grad() ? ws : ws.variable();
    const Tensor img = synth(w);
    const int n = img.dim(0);
    const double pixels = static_cast<double>(img.numel()) / n;
    const Tensor y = scale(Tensor::randn(img.shape(), rng), static_cast<float>(1.0 / std::sqrt(pixels)));
    const Tensor g = grad(sum(mul(img, y)), {w}, true)[0];
    const Tensor lengths = sqrt(mean(sum(square(g), {2}), {1}));
    double m = 0.0;
    for (float v : lengths.data()) m += v;
    m /= n;
    state.a += (1.0 - state.decay) * (m - state.a);
    const Tensor pen = scale(mean(square(add_scalar(lengths, static_cast<float>(-state.a)))), static_cast<float>(weight));
    return {pen, lengths, m};
}

struct AdamHyper {
    double lr = 2e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// Hyperparameters for a regularizer evaluated every k minibatches:
/// lr' = c lr, beta' = beta^c, c = k/(k+1).
inline AdamHyper lazy_adjusted_hparams(const AdamHyper& h, double k) {
    if (!(k >= 1.0)) throw ConfigError("lazy_adjusted_hparams: interval must be >= 1");
    const double c = k / (k + 1.0);
    return {h.lr * c, std::pow(h.beta1, c), std::pow(h.beta2, c), h.eps};
}

/// Adam with bias correction. One instance is shared by the main and the
/// regularization passes of a network.
class Adam {
public:
    void step(ParameterSet& ps, const std::vector<Tensor>& grads, const AdamHyper& h) {
        if (grads.size() != static_cast<std::size_t>(ps.size())) throw GraphError("adam: gradient count mismatch");
        if (m_.empty()) {
            for (const auto& p : ps.all()) {
                m_.emplace_back(p.value.numel(), 0.0f);
                v_.emplace_back(p.value.numel(), 0.0f);
            }
        }
        ++t_;
        const double b1c = 1.0 - std::pow(h.beta1, static_cast<double>(t_));
        const double b2c = 1.0 - std::pow(h.beta2, static_cast<double>(t_));
        for (int i = 0; i < ps.size(); ++i) {
            auto& m = m_[static_cast<std::size_t>(i)];
            auto& v = v_[static_cast<std::size_t>(i)];
            std::vector<float> p = ps[i].value.to_vector();
            const auto g = grads[static_cast<std::size_t>(i)].data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = g[j];
                m[j] = static_cast<float>(h.beta1 * m[j] + (1.0 - h.beta1) * gj);
                v[j] = static_cast<float>(h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj);
                const double mh = m[j] / (b1c > 0.0 ? b1c : 1.0);
                const double vh = v[j] / b2c;
                p[j] = static_cast<float>(p[j] - h.lr * mh / (std::sqrt(vh) + h.eps));
            }
            ps.set(i, Tensor::from_data(ps[i].value.shape(), std::move(p)));
        }
    }
    long steps() const { return t_; }

private:
    std::vector<std::vector<float>> m_, v_;
    long t_ = 0;
};

/// Layers [0, t) take w1, layers [t, L) take w2.
inline Tensor mix_styles(const Tensor& w1, const Tensor& w2, int num_ws, int t) {
    if (t <= 0) return broadcast_ws(w2, num_ws);
    if (t >= num_ws) return broadcast_ws(w1, num_ws);
    return concat({broadcast_ws(w1, t), broadcast_ws(w2, num_ws - t)}, 1);
}

/// With probability `prob` picks a crossover layer uniformly in [1, L) for the
/// whole batch; otherwise broadcasts w1. Returns the crossover (L if none).
inline Tensor style_mixing(const Tensor& w1, const Tensor& w2, int num_ws, double prob, Rng& rng,
                           int* crossover = nullptr) {
    int t = num_ws;
    if (num_ws > 1 && rng.uniform() < prob) t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_ws - 1)));
    if (crossover) *crossover = t;
    return mix_styles(w1, w2, num_ws, t);
}

/// Per-step EMA decay giving a half-life of `halflife_images`.
inline double ema_beta(int batch, double halflife_images) {
    return halflife_images > 0.0 ? std::pow(0.5, batch / halflife_images) : 0.0;
}

/// ema <- src + beta (ema - src).
inline void ema_update(ParameterSet& ema, const ParameterSet& src, double beta) {
    if (ema.size() != src.size()) throw GraphError("ema_update: parameter sets differ");
    if (beta >= 1.0) return;
    for (int i = 0; i < ema.size(); ++i) {
        std::vector<float> e = ema[i].value.to_vector();
        const auto s = src[i].value.data();
        for (std::size_t j = 0; j < e.size(); ++j) e[j] = static_cast<float>(s[j] + beta * (e[j] - s[j]));
        ema.set(i, Tensor::from_data(ema[i].value.shape(), std::move(e)));
    }
}

inline double global_norm(const std::vector<Tensor>& ts) {
    double s = 0.0;
    for (const auto& t : ts)
        for (float v : t.data()) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

struct TrainConfig {
    int batch = 8;
    long steps = 2000;
    double lr = 2e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    int d_reg_interval = 16;  // 0 disables R1, 1 evaluates it with every step
    int g_reg_interval = 8;   // same for the path-length term
    double r1_gamma = 10.0;
    double pl_weight = -1.0;  // < 0: derived from the resolution; 0 disables
    double pl_decay = 0.99;
    double ema_halflife_images = 10000.0;
    double ema_decay = -1.0;  // >= 0 overrides the half-life
    double style_mix_prob = 0.9;
    std::uint64_t seed = 1;

    void validate() const {
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0,1)");
        if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
        if (d_reg_interval < 0 || g_reg_interval < 0) throw ConfigError("regularization intervals must be >= 0");
        if (r1_gamma < 0.0) throw ConfigError("r1_gamma must be >= 0");
        if (pl_decay < 0.0 || pl_decay >= 1.0) throw ConfigError("pl_decay must lie in [0,1)");
        if (ema_decay > 1.0) throw ConfigError("ema_decay must be <= 1");
        if (style_mix_prob < 0.0 || style_mix_prob > 1.0) throw ConfigError("style_mix_prob must lie in [0,1]");
    }
};

/// Path-length weight actually applied. The random image y is normalized per
/// pixel, so the resolution weight is rescaled by the pixel count to keep the
/// penalty equal to the unnormalized formulation.
inline double effective_pl_weight(const TrainConfig& t, const NetworkConfig& n) {
    if (t.pl_weight >= 0.0) return t.pl_weight;
    const double r = n.resolution;
    return gamma_pl(r) * n.img_channels * r * r;
}

struct StepLog {
    long step = 0;
    double loss_d = 0.0, loss_g = 0.0, r1 = 0.0, pl_penalty = 0.0, pl_ema_a = 0.0;
    double d_grad_norm = 0.0, g_grad_norm = 0.0;
};

inline const char* step_log_header() { return "step,loss_d,loss_g,r1,pl_penalty,pl_ema_a,d_grad_norm,g_grad_norm"; }

/// Produces a batch of real images [N,C,r,r] in [-1,1].
using BatchSource = std::function<Tensor(int, Rng&)>;

class Trainer {
public:
    Trainer(const NetworkConfig& net, const TrainConfig& cfg, BatchSource data)
        : net_(net), cfg_(cfg), data_(std::move(data)), g_(net, mix_seed(cfg.seed, 1)), d_(net, mix_seed(cfg.seed, 2)),
          ema_(g_), rng_(mix_seed(cfg.seed, 3)) {
        cfg_.validate();
        pl_.decay = cfg_.pl_decay;
        pl_weight_ = effective_pl_weight(cfg_, net_);
        const AdamHyper base{cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps};
        hd_ = cfg_.d_reg_interval > 1 ? lazy_adjusted_hparams(base, cfg_.d_reg_interval) : base;
        hg_ = cfg_.g_reg_interval > 1 ? lazy_adjusted_hparams(base, cfg_.g_reg_interval) : base;
    }

    const NetworkConfig& network_config() const { return net_; }
    const TrainConfig& config() const { return cfg_; }
    Generator& generator() { return g_; }
    Generator& ema_generator() { return ema_; }
    Discriminator& discriminator() { return d_; }
    const PathLengthState& pl_state() const { return pl_; }
    PathLengthState& pl_state() { return pl_; }
    double pl_weight() const { return pl_weight_; }
    long step_index() const { return step_; }
    const StepLog& last_log() const { return log_; }

    StepLog step() {
        try {
            log_.step = step_;
            discriminator_step();
            generator_step();
            const double beta = cfg_.ema_decay >= 0.0 ? cfg_.ema_decay : ema_beta(cfg_.batch, cfg_.ema_halflife_images);
            ema_update(ema_.params(), g_.params(), beta);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " + std::to_string(step_) + ": " + e.what());
        }
        for (double v : {log_.loss_d, log_.loss_g, log_.r1, log_.pl_penalty, log_.d_grad_norm, log_.g_grad_norm})
            if (!std::isfinite(v)) throw NumericError("training diverged at step " + std::to_string(step_));
        ++step_;
        return log_;
    }

private:
    Tensor mixed_latents(int n, const Generator& g) {
        const Tensor z1 = Tensor::randn({n, net_.z_dim}, rng_);
        const Tensor z2 = Tensor::randn({n, net_.z_dim}, rng_);
        return style_mixing(g.mapping(z1), g.mapping(z2), g.num_ws(), cfg_.style_mix_prob, rng_);
    }

    void discriminator_step() {
        const int n = cfg_.batch;
        const Tensor real = data_(n, rng_);
        Tensor fake;
        {
            NoGradGuard ng;
            const Tensor ws = mixed_latents(n, g_);
            fake = g_.synthesize(ws, g_.random_noise(n, rng_));
        }
        auto score = [this](const Tensor& x) { return d_.forward(x); };
        const LogisticLosses l = logistic_losses(score(real), score(fake));
        Tensor total = l.loss_d;
        const bool r1_on = cfg_.d_reg_interval > 0 && cfg_.r1_gamma > 0.0;
        if (r1_on && cfg_.d_reg_interval == 1) {
            const Tensor r1 = r1_penalty(score, real, static_cast<float>(cfg_.r1_gamma));
            log_.r1 = r1.item();
            total = add(total, r1);
        }
        const auto params = d_.params().values();
        const auto grads = grad(total, params, false, true);
        log_.loss_d = l.loss_d.item();
        log_.d_grad_norm = global_norm(grads);
        d_opt_.step(d_.params(), grads, hd_);

        if (r1_on && cfg_.d_reg_interval > 1 && step_ % cfg_.d_reg_interval == 0) {
            const Tensor r1 = r1_penalty(score, real, static_cast<float>(cfg_.r1_gamma));
            log_.r1 = r1.item();
            const auto rg = grad(scale(r1, static_cast<float>(cfg_.d_reg_interval)), d_.params().values(), false, true);
            d_opt_.step(d_.params(), rg, hd_);
        }
    }

    void generator_step() {
        const int n = cfg_.batch;
        const Discriminator dfz = d_.frozen();
        const Tensor ws = mixed_latents(n, g_);
        const Tensor fake = g_.synthesize(ws, g_.random_noise(n, rng_));
        const Tensor loss_g = logistic_losses(Tensor::zeros({n, 1}), dfz.forward(fake)).loss_g;
        Tensor total = loss_g;
        const bool pl_on = cfg_.g_reg_interval > 0 && pl_weight_ > 0.0;
        if (pl_on && cfg_.g_reg_interval == 1) total = add(total, path_length_term(n));
        const auto grads = grad(total, g_.params().values(), false, true);
        log_.loss_g = loss_g.item();
        log_.g_grad_norm = global_norm(grads);
        g_opt_.step(g_.params(), grads, hg_);

        if (pl_on && cfg_.g_reg_interval > 1 && step_ % cfg_.g_reg_interval == 0) {
            const Tensor pen = scale(path_length_term(n), static_cast<float>(cfg_.g_reg_interval));
            const auto pg = grad(pen, g_.params().values(), false, true);
            g_opt_.step(g_.params(), pg, hg_);
        }
        log_.pl_ema_a = pl_.a;
    }

    Tensor path_length_term(int n) {
        const Tensor z = Tensor::randn({n, net_.z_dim}, rng_);
        const Tensor ws = broadcast_ws(g_.mapping(z), g_.num_ws());
        const NoiseSet noise = g_.random_noise(n, rng_);
        auto synth = [&](const Tensor& w) { return g_.synthesize(w, noise); };
        const PathLengthResult r = path_length_penalty(synth, ws, pl_, pl_weight_, rng_);
        log_.pl_penalty = r.penalty.item();
        return r.penalty;
    }

    NetworkConfig net_;
    TrainConfig cfg_;
    BatchSource data_;
    Generator g_;
    Discriminator d_;
    Generator ema_;
    Adam g_opt_, d_opt_;
    AdamHyper hg_, hd_;
    PathLengthState pl_;
    double pl_weight_ = 0.0;
    Rng rng_;
    long step_ = 0;
    StepLog log_;
};

}  // namespace sg2m
