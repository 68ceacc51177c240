// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <map>
#include <string>

#include <zlib.h>

#include <json.hpp>

#include "sg2m/io.hpp"
#include "sg2m/networks.hpp"

namespace sg2m {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host order");

/// File layout:
///   "SG2M" | u32 version | u64 header length | JSON header | f32 payload | u32 CRC32
/// The CRC covers every byte before it. The header holds the run config in
/// its text form, the training step, the path-length mean and a manifest of
/// {name, shape, offset} with offsets in bytes from the start of the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;
    long step = 0;
    double pl_mean = 0.0;
    Generator g;
    Generator g_ema;
    Discriminator d;
};

namespace detail {

inline std::uint32_t crc32_of(const char* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, reinterpret_cast<const Bytef*>(p), chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

template <class T>
void put_pod(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

template <class T>
T get_pod(const std::string& in, std::size_t at) {
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    return v;
}

inline std::vector<std::pair<std::string, const ParameterSet*>> checkpoint_groups(const Checkpoint& c) {
    return {{"G/", &c.g.params()}, {"G_ema/", &c.g_ema.params()}, {"D/", &c.d.params()}};
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
    nlohmann::json manifest = nlohmann::json::array();
    std::string payload;
    for (const auto& [prefix, ps] : detail::checkpoint_groups(c))
        for (const auto& p : ps->all()) {
            manifest.push_back({{"name", prefix + p.name}, {"shape", p.value.shape()}, {"offset", payload.size()}});
            const auto d = p.value.data();
            payload.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float));
        }
    const nlohmann::json header = {{"config", format_config(c.config)},
                                   {"step", c.step},
                                   {"pl_mean", c.pl_mean},
                                   {"tensors", manifest}};
    const std::string h = header.dump();
    std::string out = "SG2M";
    detail::put_pod<std::uint32_t>(out, kCheckpointVersion);
    detail::put_pod<std::uint64_t>(out, h.size());
    out += h;
    out += payload;
    detail::put_pod<std::uint32_t>(out, detail::crc32_of(out.data(), out.size()));
    return out;
}

/// Validates the whole file and every manifest entry before any weight is
/// copied into the freshly built networks.
inline Checkpoint decode_checkpoint(const std::string& bytes) {
    constexpr std::size_t fixed = 4 + 4 + 8;
    if (bytes.size() < fixed + 4 || bytes.compare(0, 4, "SG2M") != 0) throw FormatError("checkpoint: bad magic");
    const auto version = detail::get_pod<std::uint32_t>(bytes, 4);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::size_t body = bytes.size() - 4;
    if (detail::get_pod<std::uint32_t>(bytes, body) != detail::crc32_of(bytes.data(), body))
        throw FormatError("checkpoint: CRC mismatch");
    const auto hlen = detail::get_pod<std::uint64_t>(bytes, 8);
    if (hlen > body - fixed) throw FormatError("checkpoint: header length out of range");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(fixed, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    const std::size_t payload_at = fixed + hlen;
    const std::size_t payload_size = body - payload_at;

    Checkpoint c;
    try {
        c.config = parse_config(header.at("config").get<std::string>());
        c.step = header.at("step").get<long>();
        c.pl_mean = header.at("pl_mean").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    c.config.net.validate();
    c.g = Generator(c.config.net, 0);
    c.g_ema = Generator(c.config.net, 0);
    c.d = Discriminator(c.config.net, 0);

    struct Slot {
        ParameterSet* ps;
        int id;
        std::size_t offset;
    };
    std::map<std::string, ParameterSet*> groups{{"G/", &c.g.params()}, {"G_ema/", &c.g_ema.params()}, {"D/", &c.d.params()}};
    std::vector<Slot> slots;
    std::map<std::pair<ParameterSet*, int>, bool> used;
    try {
        for (const auto& t : header.at("tensors")) {
            const std::string name = t.at("name").get<std::string>();
            const Shape shape = t.at("shape").get<Shape>();
            const std::size_t offset = t.at("offset").get<std::size_t>();
            const auto slash = name.find('/');
            const auto g = slash == std::string::npos ? groups.end() : groups.find(name.substr(0, slash + 1));
            const int id = g == groups.end() ? -1 : g->second->find(name.substr(slash + 1));
            if (id < 0) throw FormatError("checkpoint: tensor '" + name + "' does not match the configured networks");
            const Tensor& cur = (*g->second)[id].value;
            if (cur.shape() != shape)
                throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                                  " but the config expects " + shape_str(cur.shape()));
            if (offset % sizeof(float) != 0 || offset > payload_size ||
                cur.numel() * sizeof(float) > payload_size - offset)
                throw FormatError("checkpoint: tensor '" + name + "' lies outside the payload");
            if (used[{g->second, id}]) throw FormatError("checkpoint: tensor '" + name + "' listed twice");
            used[{g->second, id}] = true;
            slots.push_back({g->second, id, offset});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
    }
    for (const auto& [prefix, ps] : groups)
        for (int i = 0; i < ps->size(); ++i)
            if (!used[{ps, i}]) throw FormatError("checkpoint: missing tensor '" + prefix + (*ps)[i].name + "'");

    for (const auto& s : slots) {
        const Tensor& cur = (*s.ps)[s.id].value;
        std::vector<float> d(cur.numel());
        std::memcpy(d.data(), bytes.data() + payload_at + s.offset, d.size() * sizeof(float));
        s.ps->set(s.id, Tensor::from_data(cur.shape(), std::move(d)));
    }
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file_atomic(path, encode_checkpoint(c)); }
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace sg2m
