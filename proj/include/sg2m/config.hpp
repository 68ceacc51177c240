// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sg2m/training.hpp"

namespace sg2m {

struct DatasetSpec {
    std::string kind = "blobs";  // blobs | gradients | rings
    int size = 4096;
    std::uint64_t seed = 1;
};

struct RunConfig {
    NetworkConfig net;
    TrainConfig train;
    DatasetSpec data;
    std::string out_dir = "run";
    long checkpoint_every = 1000;  // 0: only the final checkpoint
    long usage_every = 0;          // 0: snapshots at 5% and 100% of training
    int usage_samples = 256;

    void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
std::string format_number(T v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) throw ConfigError("config: bad value for '" + key + "': '" + text + "'");
    return v;
}

struct ConfigField {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
    static const std::vector<std::pair<std::string, ConfigField>> fields = [] {
        std::vector<std::pair<std::string, ConfigField>> f;
#define SG2M_NUM(key, type, member)                                                   \
    f.emplace_back(key, ConfigField{[](const RunConfig& c) { return format_number(c.member); }, \
                                    [](RunConfig& c, const std::string& v) { c.member = parse_number<type>(key, v); }})
        SG2M_NUM("resolution", int, net.resolution);
        SG2M_NUM("z_dim", int, net.z_dim);
        SG2M_NUM("w_dim", int, net.w_dim);
        SG2M_NUM("mapping_layers", int, net.mapping_layers);
        SG2M_NUM("mapping_lr_mul", float, net.mapping_lr_mul);
        SG2M_NUM("channel_base", int, net.channel_base);
        SG2M_NUM("channel_max", int, net.channel_max);
        SG2M_NUM("channel_mult", int, net.channel_mult);
        SG2M_NUM("channel_mult_min_res", int, net.channel_mult_min_res);
        SG2M_NUM("mbstd_group", int, net.mbstd_group);
        SG2M_NUM("img_channels", int, net.img_channels);
        SG2M_NUM("lrelu_alpha", float, net.lrelu_alpha);
        SG2M_NUM("batch", int, train.batch);
        SG2M_NUM("steps", long, train.steps);
        SG2M_NUM("lr", double, train.lr);
        SG2M_NUM("beta1", double, train.beta1);
        SG2M_NUM("beta2", double, train.beta2);
        SG2M_NUM("adam_eps", double, train.adam_eps);
        SG2M_NUM("d_reg_interval", int, train.d_reg_interval);
        SG2M_NUM("g_reg_interval", int, train.g_reg_interval);
        SG2M_NUM("r1_gamma", double, train.r1_gamma);
        SG2M_NUM("pl_weight", double, train.pl_weight);
        SG2M_NUM("pl_decay", double, train.pl_decay);
        SG2M_NUM("ema_halflife_images", double, train.ema_halflife_images);
        SG2M_NUM("ema_decay", double, train.ema_decay);
        SG2M_NUM("style_mix_prob", double, train.style_mix_prob);
        SG2M_NUM("seed", std::uint64_t, train.seed);
        SG2M_NUM("dataset_size", int, data.size);
        SG2M_NUM("dataset_seed", std::uint64_t, data.seed);
        SG2M_NUM("checkpoint_every", long, checkpoint_every);
        SG2M_NUM("usage_every", long, usage_every);
        SG2M_NUM("usage_samples", int, usage_samples);
#undef SG2M_NUM
        f.emplace_back("g_variant", ConfigField{[](const RunConfig& c) { return std::string(variant_name(c.net.g_variant)); },
                                                [](RunConfig& c, const std::string& v) { c.net.g_variant = parse_variant(v); }});
        f.emplace_back("d_variant", ConfigField{[](const RunConfig& c) { return std::string(variant_name(c.net.d_variant)); },
                                                [](RunConfig& c, const std::string& v) { c.net.d_variant = parse_variant(v); }});
        f.emplace_back("dataset", ConfigField{[](const RunConfig& c) { return c.data.kind; },
                                              [](RunConfig& c, const std::string& v) { c.data.kind = v; }});
        f.emplace_back("out_dir", ConfigField{[](const RunConfig& c) { return c.out_dir; },
                                              [](RunConfig& c, const std::string& v) { c.out_dir = v; }});
        return f;
    }();
    return fields;
}

}  // namespace detail

inline void RunConfig::validate() const {
    net.validate();
    train.validate();
    if (data.kind != "blobs" && data.kind != "gradients" && data.kind != "rings")
        throw ConfigError("dataset must be blobs, gradients or rings, got '" + data.kind + "'");
    if (data.size < 1) throw ConfigError("dataset_size must be >= 1");
    if (checkpoint_every < 0 || usage_every < 0) throw ConfigError("snapshot intervals must be >= 0");
    if (usage_samples < 1) throw ConfigError("usage_samples must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

/// Every known key, in file order.
inline std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const auto& [name, f] : detail::config_fields()) k.push_back(name);
    return k;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& [name, f] : detail::config_fields())
        if (name == key) return f.set(c, value);
    throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
    for (const auto& [name, f] : detail::config_fields())
        if (name == key) return f.get(c);
    throw ConfigError("config: unknown key '" + key + "'");
}

/// Applies one `key=value` (or `key = value`) assignment.
inline void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + assignment + "'");
    set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// `key = value` lines; `#` starts a comment line. Keys may appear once.
inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(t.substr(0, eq));
        if (seen[key]++) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        try {
            set_config_value(c, key, detail::trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

inline std::string format_config(const RunConfig& c) {
    std::string out;
    for (const auto& [name, f] : detail::config_fields()) out += name + " = " + f.get(c) + "\n";
    return out;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace sg2m
