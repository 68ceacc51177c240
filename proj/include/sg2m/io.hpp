// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sg2m/config.hpp"
#include "sg2m/tensor.hpp"

namespace sg2m {

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Writes to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("cannot write '" + tmp.string() + "'");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw FormatError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw FormatError("cannot rename onto '" + path + "': " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// Images. Model range [-1, 1] maps linearly onto bytes [0, 255].

inline std::uint8_t to_byte(float v) {
    if (!std::isfinite(v)) throw NumericError("image value is not finite");
    const double x = std::round((static_cast<double>(v) + 1.0) * 127.5);  // halves away from zero
    return static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

/// P6 for 3 channels, P5 for 1. Accepts [C,H,W] or [1,C,H,W].
inline std::string encode_image(const Tensor& img) {
    const Tensor x = img.rank() == 4 && img.dim(0) == 1 ? reshape(img, {img.dim(1), img.dim(2), img.dim(3)}) : img;
    if (x.rank() != 3 || (x.dim(0) != 1 && x.dim(0) != 3))
        throw ShapeError("encode_image: expected [1|3,H,W], got " + shape_str(img.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::string out = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    const auto d = x.data();
    for (std::size_t p = 0; p < plane; ++p)
        for (int ch = 0; ch < c; ++ch) out.push_back(static_cast<char>(to_byte(d[static_cast<std::size_t>(ch) * plane + p])));
    return out;
}

/// Parses binary PPM/PGM with maxval 255 into [1,C,H,W].
inline Tensor decode_image(const std::string& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* what) {
        skip_space();
        long v = 0;
        const std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])) && pos - start < 9)
            v = v * 10 + (bytes[pos++] - '0');
        if (pos == start) throw FormatError(std::string("image header: missing ") + what);
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw FormatError("image header: expected P5 or P6");
    const int c = bytes[1] == '6' ? 3 : 1;
    pos = 2;
    const long w = read_int("width"), h = read_int("height"), maxval = read_int("maxval");
    if (w < 1 || h < 1) throw FormatError("image header: empty image");
    if (maxval != 255) throw FormatError("image header: only maxval 255 is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("image header: missing separator");
    ++pos;
    const std::size_t plane = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - pos < plane * static_cast<std::size_t>(c)) throw FormatError("image data truncated");
    std::vector<float> d(plane * static_cast<std::size_t>(c));
    for (std::size_t p = 0; p < plane; ++p)
        for (int ch = 0; ch < c; ++ch)
            d[static_cast<std::size_t>(ch) * plane + p] = from_byte(static_cast<std::uint8_t>(bytes[pos++]));
    return Tensor::from_data({1, c, static_cast<int>(h), static_cast<int>(w)}, std::move(d));
}

inline void write_image(const std::string& path, const Tensor& img) { write_file_atomic(path, encode_image(img)); }
inline Tensor read_image(const std::string& path) { return decode_image(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV with a header row. Numbers use the shortest round-trip representation.

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(const std::vector<double>& values) {
        std::vector<std::string> row;
        for (double v : values) row.push_back(detail::format_number(v));
        add_row(std::move(row));
    }
    void add_row(std::vector<std::string> row) {
        if (row.size() != header_.size()) throw ShapeError("csv: row width does not match the header");
        rows_.push_back(std::move(row));
    }
    std::size_t rows() const { return rows_.size(); }

    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
            out += "\n";
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }
    void write(const std::string& path) const { write_file_atomic(path, str()); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

}  // namespace sg2m
