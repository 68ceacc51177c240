// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include <json.hpp>

#include "sg2m/io.hpp"

using namespace sg2m;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "sg2m_test_cli";

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(SG2M_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string dir(const std::string& name) { return (kRoot / name).string(); }

const std::string kTiny =
    "--set resolution=16 --set z_dim=8 --set w_dim=8 --set mapping_layers=2 --set channel_base=4 "
    "--set channel_max=16 --set batch=4 --set usage_samples=16 --quiet";

/// Trains the shared tiny model once.
std::string tiny_checkpoint() {
    static const std::string path = [] {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        REQUIRE(run("train " + kTiny + " --set steps=10 --out " + dir("base")) == 0);
        return dir("base") + "/checkpoint-000010.sg2m";
    }();
    return path;
}

std::size_t line_count(const std::string& path) {
    const std::string s = read_file(path);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    tiny_checkpoint();
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("train --set nonsense=1") == 2);
    CHECK(run("train --set steps=-1") == 2);
    CHECK(run("train --config " + dir("missing.cfg")) == 2);
    CHECK(run("eval " + dir("missing.sg2m")) == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("train writes checkpoints, metrics and usage snapshots") {
    const std::string ck = tiny_checkpoint();
    CHECK(fs::exists(ck));
    CHECK(line_count(dir("base") + "/metrics.csv") == 11);
    CHECK(line_count(dir("base") + "/resolution_usage.csv") == 3);
    const std::string cfg = read_file(dir("base") + "/config.txt");
    CHECK(cfg.find("steps = 10\n") != std::string::npos);

    // The written config reproduces the run.
    REQUIRE(run("train --config " + dir("base") + "/config.txt --quiet --out " + dir("replay")) == 0);
    CHECK(read_file(dir("replay") + "/metrics.csv") == read_file(dir("base") + "/metrics.csv"));
}

TEST_CASE("zero steps emits only the initial checkpoint") {
    tiny_checkpoint();
    REQUIRE(run("train " + kTiny + " --set steps=0 --out " + dir("zero")) == 0);
    std::vector<std::string> ckpts;
    for (const auto& e : fs::directory_iterator(dir("zero")))
        if (e.path().extension() == ".sg2m") ckpts.push_back(e.path().filename().string());
    CHECK(ckpts == std::vector<std::string>{"checkpoint-000000.sg2m"});
    CHECK(line_count(dir("zero") + "/metrics.csv") == 1);
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
    tiny_checkpoint();
    // Same relative output directory, so the stored configs match too.
    const std::string args = "train " + kTiny + " --set steps=6 --set checkpoint_every=3 --out run";
    fs::create_directories(dir("t1"));
    fs::create_directories(dir("t3"));
    REQUIRE(run(args, "cd " + dir("t1") + " && SG2M_THREADS=1") == 0);
    REQUIRE(run(args, "cd " + dir("t3") + " && SG2M_THREADS=3") == 0);
    for (const char* f : {"metrics.csv", "resolution_usage.csv", "checkpoint-000003.sg2m", "checkpoint-000006.sg2m"})
        CHECK(read_file(dir("t1") + "/run/" + f) == read_file(dir("t3") + "/run/" + f));

    const std::string ck = dir("t1") + "/run/checkpoint-000006.sg2m";
    const std::string eval = "eval " + ck + " --ppl-samples 8 --jacobian-points 1 --seed 4 --out ";
    REQUIRE(run(eval + dir("e1"), "SG2M_THREADS=1") == 0);
    REQUIRE(run(eval + dir("e3"), "SG2M_THREADS=3") == 0);
    for (const char* f : {"ppl.csv", "conditioning.csv", "summary.json"})
        CHECK(read_file(dir("e1") + "/" + f) == read_file(dir("e3") + "/" + f));

    const std::string proj = "project " + ck + " --target generated:3 --iterations 20 --stats-samples 64 --out ";
    REQUIRE(run(proj + dir("p1"), "SG2M_THREADS=1") == 0);
    REQUIRE(run(proj + dir("p3"), "SG2M_THREADS=3") == 0);
    for (const char* f : {"result.json", "projected.ppm", "loss.csv"})
        CHECK(read_file(dir("p1") + "/" + f) == read_file(dir("p3") + "/" + f));
}

TEST_CASE("numeric divergence exits with code 3 and leaves a dump") {
    tiny_checkpoint();
    CHECK(run("train " + kTiny + " --set steps=5 --set lr=1e30 --out " + dir("nan")) == 3);
    CHECK(fs::exists(dir("nan") + "/diverged.json"));
    CHECK(fs::exists(dir("nan") + "/diverged.sg2m"));
    const auto dump = nlohmann::json::parse(read_file(dir("nan") + "/diverged.json"));
    CHECK(dump.at("error").get<std::string>().find("diverged") != std::string::npos);
}

TEST_CASE("project command") {
    const std::string ck = tiny_checkpoint();
    SECTION("zero iterations reports the initial distance") {
        REQUIRE(run("project " + ck + " --target generated:7 --iterations 0 --stats-samples 64 --out " + dir("p0")) == 0);
        const auto r = nlohmann::json::parse(read_file(dir("p0") + "/result.json"));
        CHECK(r.at("distance").get<double>() == r.at("initial_distance").get<double>());
        CHECK(r.at("w").size() == 8);
        CHECK(line_count(dir("p0") + "/loss.csv") == 1);
        CHECK(read_image(dir("p0") + "/projected.ppm").shape() == Shape{1, 3, 16, 16});
    }
    SECTION("image targets and error paths") {
        write_image(dir("small.ppm"), Tensor::zeros({1, 3, 8, 8}));
        write_image(dir("right.ppm"), Tensor::zeros({1, 3, 16, 16}));
        CHECK(run("project " + ck + " --target " + dir("small.ppm")) == 2);
        CHECK(run("project " + ck + " --target " + dir("nope.ppm")) == 2);
        CHECK(run("project " + ck) == 2);
        CHECK(run("project " + ck + " --target generated:1 --metric lpips") == 2);
        CHECK(run("project " + ck + " --target " + dir("right.ppm") + " --iterations 5 --stats-samples 64 --out " +
                  dir("pimg")) == 0);
    }
    SECTION("self test writes one row per target") {
        REQUIRE(run("project " + ck + " --self-test 3 --foreign-test 2 --iterations 10 --stats-samples 64 --out " +
                    dir("pst")) == 0);
        CHECK(line_count(dir("pst") + "/self_test.csv") == 4);
        CHECK(line_count(dir("pst") + "/foreign_test.csv") == 3);
    }
}

TEST_CASE("eval, analyze-resolution and gradcheck commands") {
    const std::string ck = tiny_checkpoint();
    REQUIRE(run("eval " + ck + " --ppl-samples 0 --jacobian-points 0 --out " + dir("e0")) == 0);
    CHECK(read_file(dir("e0") + "/ppl.csv") == "index,ppl\n");
    CHECK(run("eval " + ck + " --ppl-samples -1") == 2);

    REQUIRE(run("analyze-resolution " + ck + " --samples 16 --out " + dir("usage.csv")) == 0);
    const std::string csv = read_file(dir("usage.csv"));
    const std::string row = csv.substr(csv.find('\n') + 1);
    std::vector<double> cells;
    std::stringstream ss(row);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(std::stod(c));
    REQUIRE(cells.size() == 4);
    CHECK(cells[0] == 40.0);
    CHECK(cells[1] + cells[2] + cells[3] == Catch::Approx(100.0).margin(1e-6));

    CHECK(run("gradcheck") == 0);
}
