// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>

#include <json.hpp>

#include "sg2m/checkpoint.hpp"
#include "sg2m/dataset.hpp"
#include "sg2m/metrics.hpp"

namespace sg2m {

inline Checkpoint snapshot(const RunConfig& cfg, Trainer& tr) {
    Checkpoint c;
    c.config = cfg;
    c.step = tr.step_index();
    c.pl_mean = tr.pl_state().a;
    c.g = tr.generator();
    c.g_ema = tr.ema_generator();
    c.d = tr.discriminator();
    return c;
}

inline std::string checkpoint_name(long step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint-%06ld.sg2m", step);
    return buf;
}

/// Steps after which resolution usage is recorded.
inline std::set<long> usage_snapshot_steps(const RunConfig& cfg) {
    std::set<long> s;
    const long n = cfg.train.steps;
    if (cfg.usage_every > 0) {
        for (long k = cfg.usage_every; k <= n; k += cfg.usage_every) s.insert(k);
    } else if (n > 0) {
        s.insert(std::max(1L, std::lround(0.05 * static_cast<double>(n))));
    }
    s.insert(n);
    return s;
}

inline std::vector<std::string> usage_header(const Generator& g) {
    std::vector<std::string> h{"images_seen"};
    for (int r = 4; r <= g.resolution(); r *= 2) h.push_back("res_" + std::to_string(r));
    return h;
}

inline std::vector<double> usage_row(long images_seen, const ResolutionUsage& u) {
    std::vector<double> row{static_cast<double>(images_seen)};
    row.insert(row.end(), u.percent.begin(), u.percent.end());
    return row;
}

inline std::vector<double> step_log_row(const StepLog& l) {
    return {static_cast<double>(l.step), l.loss_d, l.loss_g, l.r1, l.pl_penalty, l.pl_ema_a, l.d_grad_norm, l.g_grad_norm};
}

inline std::vector<std::string> split_csv_header(const std::string& h) {
    std::vector<std::string> out;
    std::stringstream ss(h);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    return out;
}

/// Runs a full training job into `cfg.out_dir`:
///   config.txt, metrics.csv, checkpoint-NNNNNN.sg2m (periodic and final),
///   resolution_usage.csv for skip generators.
/// On a numeric failure it writes diverged.json plus diverged.sg2m (weights
/// at the point of failure) and rethrows.
inline void run_training(const RunConfig& cfg, std::ostream* progress = nullptr) {
    cfg.validate();
    if (cfg.net.img_channels != 3) throw ConfigError("synthetic datasets are RGB; img_channels must be 3");
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    write_file_atomic((out / "config.txt").string(), format_config(cfg));

    const SyntheticDataset data(cfg.data, cfg.net.resolution);
    Trainer tr(cfg.net, cfg.train, data.source());
    CsvTable metrics(split_csv_header(step_log_header()));
    const bool track_usage = cfg.net.g_variant == Variant::skip;
    CsvTable usage(usage_header(tr.generator()));
    const std::set<long> usage_steps = usage_snapshot_steps(cfg);
    const std::uint64_t usage_seed = mix_seed(cfg.train.seed, 4);

    auto flush = [&] {
        metrics.write((out / "metrics.csv").string());
        if (track_usage) usage.write((out / "resolution_usage.csv").string());
    };

    while (tr.step_index() < cfg.train.steps) {
        try {
            metrics.add_row(step_log_row(tr.step()));
        } catch (const NumericError& e) {
            flush();
            save_checkpoint((out / "diverged.sg2m").string(), snapshot(cfg, tr));
            nlohmann::json dump = {{"step", tr.step_index()}, {"error", e.what()}, {"pl_mean", tr.pl_state().a}};
            if (metrics.rows() > 0) {
                const StepLog& l = tr.last_log();
                dump["last_log"] = {{"step", l.step}, {"loss_d", l.loss_d}, {"loss_g", l.loss_g}, {"r1", l.r1},
                                    {"pl_penalty", l.pl_penalty}, {"d_grad_norm", l.d_grad_norm},
                                    {"g_grad_norm", l.g_grad_norm}};
            }
            write_file_atomic((out / "diverged.json").string(), dump.dump(2) + "\n");
            throw;
        }
        const long done = tr.step_index();
        if (track_usage && usage_steps.count(done)) {
            const auto u = resolution_usage(tr.generator(), cfg.usage_samples, usage_seed);
            usage.add_row(usage_row(done * cfg.train.batch, u));
        }
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.train.steps) {
            save_checkpoint((out / checkpoint_name(done)).string(), snapshot(cfg, tr));
            flush();
        }
        if (progress && (done % 100 == 0 || done == cfg.train.steps)) {
            const StepLog& l = tr.last_log();
            *progress << "step " << done << "/" << cfg.train.steps << " loss_d " << l.loss_d << " loss_g " << l.loss_g
                      << "\n";
        }
    }
    if (track_usage && cfg.train.steps == 0) {
        const auto u = resolution_usage(tr.generator(), cfg.usage_samples, usage_seed);
        usage.add_row(usage_row(0, u));
    }
    save_checkpoint((out / checkpoint_name(tr.step_index())).string(), snapshot(cfg, tr));
    flush();
}

}  // namespace sg2m
