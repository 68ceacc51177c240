// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "sg2m/checkpoint.hpp"
#include "sg2m/dataset.hpp"
#include "sg2m/io.hpp"

using namespace sg2m;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sg2m_test_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig tiny_run() {
    RunConfig c;
    c.net.resolution = 8;
    c.net.z_dim = c.net.w_dim = 8;
    c.net.mapping_layers = 2;
    c.net.channel_base = 4;
    c.net.channel_max = 8;
    return c;
}

Checkpoint tiny_checkpoint(const RunConfig& cfg) {
    Checkpoint c;
    c.config = cfg;
    c.step = 42;
    c.pl_mean = 0.125;
    c.g = Generator(cfg.net, 1);
    c.g_ema = Generator(cfg.net, 2);
    c.d = Discriminator(cfg.net, 3);
    return c;
}

}  // namespace

TEST_CASE("config text round-trips losslessly") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        RunConfig c;
        c.net.resolution = 1 << (3 + static_cast<int>(rng.below(4)));
        c.net.mapping_lr_mul = static_cast<float>(rng.uniform(1e-3, 1.0));
        c.net.lrelu_alpha = static_cast<float>(rng.uniform(0.01, 0.5));
        c.net.g_variant = static_cast<Variant>(rng.below(3));
        c.train.lr = rng.uniform(1e-5, 1e-1);
        c.train.beta2 = rng.uniform(0.9, 0.9999);
        c.train.pl_weight = rng.uniform(-1.0, 4.0);
        c.train.seed = rng.next_u64();
        c.data.kind = trial % 2 ? "rings" : "gradients";
        c.out_dir = "runs/trial" + std::to_string(trial);
        const std::string text = format_config(c);
        const RunConfig back = parse_config(text);
        CHECK(format_config(back) == text);
        CHECK(back.train.lr == c.train.lr);
        CHECK(back.net.mapping_lr_mul == c.net.mapping_lr_mul);
        CHECK(back.train.seed == c.train.seed);
        CHECK(back.net.g_variant == c.net.g_variant);
    }
}

TEST_CASE("config parser accepts comments and rejects bad input") {
    const RunConfig c = parse_config("# comment\n\n  steps = 17  \nd_variant=skip\n");
    CHECK(c.train.steps == 17);
    CHECK(c.net.d_variant == Variant::skip);
    CHECK(c.net.resolution == RunConfig{}.net.resolution);
    CHECK_THROWS_AS(parse_config("stepz = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = 3\nsteps = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = three\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps = 3.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("steps\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("g_variant = wide\n"), ConfigError);
    CHECK(config_keys().size() == 36);
}

TEST_CASE("overrides apply on top of the file") {
    RunConfig c = parse_config("batch = 4\nlr = 0.001\n");
    apply_override(c, "batch=16");
    apply_override(c, "dataset = rings");
    CHECK(c.train.batch == 16);
    CHECK(c.train.lr == 0.001);
    CHECK(c.data.kind == "rings");
    CHECK_THROWS_AS(apply_override(c, "batch"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "nope=1"), ConfigError);
    c.data.kind = "faces";
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("pixel mapping endpoints and midpoint") {
    CHECK(to_byte(-1.0f) == 0);
    CHECK(to_byte(1.0f) == 255);
    CHECK(to_byte(0.0f) == 128);
    CHECK(to_byte(-3.0f) == 0);
    CHECK(to_byte(7.0f) == 255);
    for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);
    CHECK_THROWS_AS(to_byte(std::nanf("")), NumericError);
}

TEST_CASE("PPM and PGM round-trip byte for byte") {
    Rng rng(2);
    for (int c : {1, 3}) {
        const Tensor img = Tensor::uniform({1, c, 5, 7}, rng, -1, 1);
        const std::string bytes = encode_image(img);
        CHECK(bytes.substr(0, 2) == (c == 3 ? "P6" : "P5"));
        const Tensor back = decode_image(bytes);
        CHECK(back.shape() == Shape{1, c, 5, 7});
        CHECK(encode_image(back) == bytes);
        for (std::size_t i = 0; i < img.numel(); ++i) CHECK(std::abs(back[i] - img[i]) <= 1.0f / 255.0f + 1e-6f);
    }
    const fs::path dir = scratch("img");
    const Tensor img = Tensor::uniform({3, 4, 4}, rng, -1, 1);
    write_image((dir / "a.ppm").string(), img);
    CHECK(read_file((dir / "a.ppm").string()) == encode_image(img));
    CHECK_FALSE(fs::exists(dir / "a.ppm.tmp"));
}

TEST_CASE("image decoding rejects malformed files") {
    const std::string good = encode_image(Tensor::zeros({1, 3, 4, 4}));
    CHECK_THROWS_AS(decode_image(good.substr(0, good.size() - 1)), FormatError);
    CHECK_THROWS_AS(decode_image("P3\n4 4\n255\n"), FormatError);
    CHECK_THROWS_AS(decode_image("P6\n4 4\n65535\n"), FormatError);
    CHECK_THROWS_AS(decode_image("P6\n4\n"), FormatError);
    CHECK_THROWS_AS(decode_image(""), FormatError);
    CHECK_THROWS_AS(read_image("/nonexistent/x.ppm"), FormatError);
    CHECK_THROWS_AS(encode_image(Tensor::zeros({2, 4, 4})), ShapeError);
    const Tensor commented = decode_image(std::string("P5\n# made by hand\n2 1\n255\n") + std::string(1, '\0') + "\xff");
    CHECK(commented[0] == -1.0f);
    CHECK(commented[1] == 1.0f);
}

TEST_CASE("checkpoint save and load are bit-identical") {
    const RunConfig cfg = tiny_run();
    const Checkpoint c = tiny_checkpoint(cfg);
    const std::string bytes = encode_checkpoint(c);
    CHECK(bytes.substr(0, 4) == "SG2M");
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.step == 42);
    CHECK(back.pl_mean == 0.125);
    CHECK(format_config(back.config) == format_config(cfg));
    for (int i = 0; i < c.g.params().size(); ++i)
        CHECK(back.g.params()[i].value.to_vector() == c.g.params()[i].value.to_vector());
    for (int i = 0; i < c.d.params().size(); ++i)
        CHECK(back.d.params()[i].value.to_vector() == c.d.params()[i].value.to_vector());

    const fs::path dir = scratch("ckpt");
    save_checkpoint((dir / "a.sg2m").string(), c);
    CHECK(read_file((dir / "a.sg2m").string()) == bytes);
    CHECK(encode_checkpoint(load_checkpoint((dir / "a.sg2m").string())) == bytes);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const std::string bytes = encode_checkpoint(tiny_checkpoint(tiny_run()));
    std::string flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(decode_checkpoint(flipped), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), FormatError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
    CHECK_THROWS_AS(decode_checkpoint("SG2M"), FormatError);
}

TEST_CASE("checkpoint whose config disagrees with the stored shapes fails") {
    RunConfig wide = tiny_run();
    wide.net.channel_base = 8;
    Checkpoint c = tiny_checkpoint(tiny_run());
    c.config = wide;
    CHECK_THROWS_WITH(decode_checkpoint(encode_checkpoint(c)), Catch::Matchers::ContainsSubstring("shape"));

    RunConfig deep = tiny_run();
    deep.net.mapping_layers = 3;
    c.config = deep;
    CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(c)), FormatError);

    RunConfig shallow = tiny_run();
    shallow.net.mapping_layers = 1;
    c.config = shallow;
    CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(c)), FormatError);
}

TEST_CASE("synthetic datasets are deterministic and in range") {
    for (const char* kind : {"blobs", "gradients", "rings"}) {
        INFO(kind);
        DatasetSpec s;
        s.kind = kind;
        s.size = 64;
        const SyntheticDataset a(s, 16), b(s, 16);
        CHECK(a.image(5).to_vector() == b.image(5).to_vector());
        CHECK(a.image(5).to_vector() != a.image(6).to_vector());
        s.seed = 2;
        CHECK(SyntheticDataset(s, 16).image(5).to_vector() != a.image(5).to_vector());
        for (float v : a.image(3).to_vector()) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
        Rng r1(3), r2(3);
        const Tensor batch = a.batch(4, r1);
        CHECK(batch.shape() == Shape{4, 3, 16, 16});
        CHECK(a.source()(4, r2).to_vector() == batch.to_vector());
    }
    DatasetSpec bad;
    bad.kind = "faces";
    CHECK_THROWS_AS(SyntheticDataset(bad, 8), ConfigError);
}

TEST_CASE("documented blob channel statistics") {
    DatasetSpec s;
    s.size = 1000;
    const ChannelStats st = SyntheticDataset(s, 32).channel_stats();
    const std::vector<double> mean{-0.545, -0.562, -0.430}, sd{0.40, 0.24, 0.11};
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(st.mean[c] == Approx(mean[c]).margin(5e-3));
        CHECK(st.stddev[c] == Approx(sd[c]).margin(1e-2));
    }
}

TEST_CASE("CSV tables") {
    CsvTable t({"a", "b"});
    t.add_row({1.0, 0.1});
    t.add_row(std::vector<std::string>{"x", "y"});
    CHECK(t.str() == "a,b\n1,0.1\nx,y\n");
    CHECK_THROWS_AS(t.add_row(std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("atomic writes replace the target and leave no temporary") {
    const fs::path dir = scratch("atomic");
    const std::string p = (dir / "sub" / "f.txt").string();
    write_file_atomic(p, "one");
    write_file_atomic(p, "two");
    CHECK(read_file(p) == "two");
    CHECK_FALSE(fs::exists(p + ".tmp"));
}
