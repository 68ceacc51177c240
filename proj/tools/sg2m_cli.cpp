// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, project, eval, analyze-resolution, gradcheck.
// Exit codes: 0 ok, 2 usage or configuration error, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sg2m/sg2m.hpp"

namespace fs = std::filesystem;
using namespace sg2m;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct ModelArgs {
    std::string checkpoint;
    bool raw = false;  // raw generator weights instead of the moving average
};

void add_model_args(CLI::App* cmd, ModelArgs& m) {
    cmd->add_option("checkpoint", m.checkpoint, "Checkpoint file")->required();
    cmd->add_flag("--raw", m.raw, "Use the raw generator instead of the EMA generator");
}

Generator pick_generator(const Checkpoint& c, bool raw) { return raw ? c.g : c.g_ema; }

std::string out_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

json schedule_json(const ProjectionSchedule& s) {
    return {{"iterations", s.iterations}, {"lr_max", s.lr_max},           {"ramp_up", s.ramp_up},
            {"ramp_down", s.ramp_down},   {"noise_phase", s.noise_phase}, {"noise_scale", s.noise_scale},
            {"reg_weight", s.reg_weight}};
}

/// Image and latent produced by the generator for a target seed.
Tensor generated_target(const Generator& g, std::uint64_t seed) {
    NoGradGuard ng;
    Rng rng(seed);
    const Tensor w = g.mapping(Tensor::randn({1, g.z_dim()}, rng));
    return g.synthesize(broadcast_ws(w, g.num_ws()), g.random_noise(1, rng));
}

Tensor uniform_target(const Generator& g, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::uniform({1, g.config().img_channels, g.resolution(), g.resolution()}, rng, -1.0f, 1.0f);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
    for (const auto& o : a.overrides) apply_override(cfg, o);
    if (!a.out.empty()) cfg.out_dir = a.out;
    run_training(cfg, a.quiet ? nullptr : &std::cerr);
    return 0;
}

struct ProjectArgs {
    ModelArgs model;
    std::string target;
    int self_test = 0;
    int foreign_test = 0;
    int iterations = 1000;
    std::string metric = "random_projection";
    std::uint64_t seed = 1;
    int stats_samples = 10000;
    std::string out = "projection";
};

int cmd_project(const ProjectArgs& a) {
    if (a.target.empty() && a.self_test == 0 && a.foreign_test == 0)
        throw ConfigError("project: give --target, --self-test or --foreign-test");
    if (a.self_test < 0 || a.foreign_test < 0) throw ConfigError("project: test counts must be >= 0");
    const Checkpoint ck = load_checkpoint(a.model.checkpoint);
    const Generator g = pick_generator(ck, a.model.raw);
    const MetricPtr metric = make_metric(a.metric, g.config().img_channels);
    const ProjectionSchedule sched = ProjectionSchedule{}.with_iterations(a.iterations);
    sched.validate();
    const LatentStats stats = estimate_latent_stats(g, a.stats_samples, mix_seed(a.seed, 1));
    fs::create_directories(a.out);

    if (!a.target.empty()) {
        Tensor target;
        const std::string prefix = "generated:";
        if (a.target.rfind(prefix, 0) == 0) {
            target = generated_target(g, detail::parse_number<std::uint64_t>("target seed", a.target.substr(prefix.size())));
        } else {
            target = read_image(a.target);
        }
        if (target.dim(1) != g.config().img_channels || target.dim(2) != g.resolution() || target.dim(3) != g.resolution())
            throw ConfigError("project: target is " + shape_str(target.shape()) + " but the generator produces " +
                              std::to_string(g.config().img_channels) + " channels at " + std::to_string(g.resolution()) +
                              "x" + std::to_string(g.resolution()));
        const ProjectionResult init = project(g, target, stats, sched.with_iterations(0), *metric, a.seed);
        const ProjectionResult r = project(g, target, stats, sched, *metric, a.seed);
        write_image(out_path(a.out, g.config().img_channels == 3 ? "projected.ppm" : "projected.pgm"), r.image);
        CsvTable loss({"step", "loss"});
        for (std::size_t i = 0; i < r.loss_trace.size(); ++i) loss.add_row({static_cast<double>(i), r.loss_trace[i]});
        loss.write(out_path(a.out, "loss.csv"));
        const json res = {{"target", a.target},       {"metric", metric->name()},
                          {"seed", a.seed},           {"distance", r.distance},
                          {"initial_distance", init.distance},
                          {"w", r.w.to_vector()},     {"schedule", schedule_json(sched)}};
        write_file_atomic(out_path(a.out, "result.json"), res.dump(2) + "\n");
        std::cout << "distance " << r.distance << "\n";
    }

    auto batch_test = [&](int n, const char* file, auto make_target) {
        CsvTable t({"index", "target_seed", "distance"});
        std::vector<double> dist;
        for (int i = 0; i < n; ++i) {
            const std::uint64_t ts = mix_seed(a.seed, 1000 + static_cast<std::uint64_t>(i));
            const ProjectionResult r = project(g, make_target(ts), stats, sched, *metric, mix_seed(a.seed, ts));
            t.add_row(std::vector<std::string>{std::to_string(i), std::to_string(ts), detail::format_number(r.distance)});
            dist.push_back(r.distance);
        }
        t.write(out_path(a.out, file));
        if (!dist.empty())
            std::cout << file << ": p10 " << percentile(dist, 10) << " p50 " << percentile(dist, 50) << " p90 "
                      << percentile(dist, 90) << "\n";
    };
    if (a.self_test > 0) batch_test(a.self_test, "self_test.csv", [&](std::uint64_t s) { return generated_target(g, s); });
    if (a.foreign_test > 0)
        batch_test(a.foreign_test, "foreign_test.csv", [&](std::uint64_t s) { return uniform_target(g, s); });
    return 0;
}

struct EvalArgs {
    ModelArgs model;
    int ppl_samples = 1000;
    double epsilon = 1e-4;
    int batch = 16;
    int jacobian_points = 4;
    std::string metric = "random_projection";
    std::uint64_t seed = 1;
    std::string out = "eval";
};

int cmd_eval(const EvalArgs& a) {
    if (a.ppl_samples < 0 || a.jacobian_points < 0) throw ConfigError("eval: sample counts must be >= 0");
    if (a.batch < 1) throw ConfigError("eval: --batch must be >= 1");
    if (!(a.epsilon > 0.0)) throw ConfigError("eval: --epsilon must be positive");
    const Checkpoint ck = load_checkpoint(a.model.checkpoint);
    const Generator g = pick_generator(ck, a.model.raw);
    const MetricPtr metric = make_metric(a.metric, g.config().img_channels);
    fs::create_directories(a.out);

    PplOptions opt;
    opt.samples = a.ppl_samples;
    opt.epsilon = a.epsilon;
    opt.batch = a.batch;
    opt.seed = a.seed;
    const PplReport r = ppl(g, *metric, opt);
    CsvTable scores({"index", "ppl"});
    for (std::size_t i = 0; i < r.scores.size(); ++i) scores.add_row({static_cast<double>(i), r.scores[i]});
    scores.write(out_path(a.out, "ppl.csv"));
    CsvTable hist({"bin_lo", "bin_hi", "count"});
    for (std::size_t i = 0; i < r.bin_counts.size(); ++i)
        hist.add_row({r.bin_edges[i], r.bin_edges[i + 1], static_cast<double>(r.bin_counts[i])});
    hist.write(out_path(a.out, "ppl_histogram.csv"));

    CsvTable cond([&] {
        std::vector<std::string> h{"point", "ratio", "coeff_of_variation"};
        for (int i = 0; i < g.w_dim(); ++i) h.push_back("sv_" + std::to_string(i));
        return h;
    }());
    const auto reps = jacobian_conditioning(g, a.jacobian_points, mix_seed(a.seed, 2));
    double mean_ratio = 0.0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        std::vector<double> row{static_cast<double>(i), reps[i].ratio, reps[i].coeff_of_variation};
        row.insert(row.end(), reps[i].singular_values.begin(), reps[i].singular_values.end());
        cond.add_row(row);
        mean_ratio += reps[i].ratio / static_cast<double>(reps.size());
    }
    cond.write(out_path(a.out, "conditioning.csv"));

    json summary = {{"metric", metric->name()}, {"seed", a.seed},   {"epsilon", a.epsilon},
                    {"ppl_samples", r.scores.size()}, {"jacobian_points", reps.size()}};
    if (!r.scores.empty()) summary["ppl"] = {{"mean", r.mean}, {"p10", r.p10}, {"p50", r.p50}, {"p90", r.p90}};
    if (!reps.empty()) summary["mean_condition_ratio"] = mean_ratio;
    write_file_atomic(out_path(a.out, "summary.json"), summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return 0;
}

struct ResolutionArgs {
    ModelArgs model;
    int samples = 1024;
    std::uint64_t seed = 1;
    std::string out = "resolution_usage.csv";
};

int cmd_analyze_resolution(const ResolutionArgs& a) {
    if (a.samples < 1) throw ConfigError("analyze-resolution: --samples must be >= 1");
    const Checkpoint ck = load_checkpoint(a.model.checkpoint);
    const Generator g = pick_generator(ck, a.model.raw);
    const ResolutionUsage u = resolution_usage(g, a.samples, a.seed);
    CsvTable t(usage_header(g));
    t.add_row(usage_row(ck.step * ck.config.train.batch, u));
    t.write(a.out);
    for (std::size_t i = 0; i < u.resolutions.size(); ++i)
        std::cout << u.resolutions[i] << "x" << u.resolutions[i] << " " << u.percent[i] << "%\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    bool ok = true;
    for (const auto& c : standard_gradcheck_suite(seed)) {
        const double e1 = check_gradient(c.fn, c.inputs, 1e-3).rel_error;
        const bool p1 = e1 <= 1e-3;
        ok = ok && p1;
        std::cout << c.name << " first-order " << e1 << (p1 ? " PASS" : " FAIL") << "\n";
        if (c.second_order) {
            const double e2 = check_second_gradient(c.fn, c.inputs, 1e-3).rel_error;
            const bool p2 = e2 <= 1e-2;
            ok = ok && p2;
            std::cout << c.name << " second-order " << e2 << (p2 ? " PASS" : " FAIL") << "\n";
        }
    }
    return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Style-based generator toolkit"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a generator/discriminator pair on a synthetic dataset");
    train->add_option("--config", ta.config, "key = value config file");
    train->add_option("--set", ta.overrides, "Override one config key (key=value); repeatable");
    train->add_option("--out", ta.out, "Output directory (overrides out_dir)");
    train->add_flag("--quiet", ta.quiet, "No progress output");

    ProjectArgs pa;
    auto* proj = app.add_subcommand("project", "Project images into the latent space of a checkpoint");
    add_model_args(proj, pa.model);
    proj->add_option("--target", pa.target, "Target image (PPM/PGM) or generated:SEED");
    proj->add_option("--self-test", pa.self_test, "Project N images generated by the checkpoint");
    proj->add_option("--foreign-test", pa.foreign_test, "Project N uniform-noise images");
    proj->add_option("--iterations", pa.iterations, "Optimization steps");
    proj->add_option("--metric", pa.metric, "pixel_l2 or random_projection");
    proj->add_option("--seed", pa.seed, "Random seed");
    proj->add_option("--stats-samples", pa.stats_samples, "Latents used for the mean/spread estimate");
    proj->add_option("--out", pa.out, "Output directory");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Perceptual path length and Jacobian conditioning");
    add_model_args(eval, ea.model);
    eval->add_option("--ppl-samples", ea.ppl_samples, "Path-length samples");
    eval->add_option("--epsilon", ea.epsilon, "Latent step");
    eval->add_option("--batch", ea.batch, "Batch size");
    eval->add_option("--jacobian-points", ea.jacobian_points, "Latents for the conditioning report");
    eval->add_option("--metric", ea.metric, "pixel_l2 or random_projection");
    eval->add_option("--seed", ea.seed, "Random seed");
    eval->add_option("--out", ea.out, "Output directory");

    ResolutionArgs ra;
    auto* res = app.add_subcommand("analyze-resolution", "Per-resolution contribution of a skip generator");
    add_model_args(res, ra.model);
    res->add_option("--samples", ra.samples, "Generated images");
    res->add_option("--seed", ra.seed, "Random seed");
    res->add_option("--out", ra.out, "CSV output file");

    std::uint64_t gc_seed = 7;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable primitive");
    gc->add_option("--seed", gc_seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*train) return cmd_train(ta);
        if (*proj) return cmd_project(pa);
        if (*eval) return cmd_eval(ea);
        if (*res) return cmd_analyze_resolution(ra);
        if (*gc) return cmd_gradcheck(gc_seed);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
