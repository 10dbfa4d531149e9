#include "rsosplat/bench.hpp"
#include "rsosplat/synth.hpp"

#include "support/error_code.hpp"
#include "support/oracles.hpp"
#include "support/scenes.hpp"
#include "support/temp_dir.hpp"

#include <doctest.h>

#include <cstring>
#include <memory>
#include <random>
#include <thread>

using namespace rsosplat;
using rsosplat::testing::error_code_of;

namespace {

/// Allocates and touches mb megabytes so they count as resident.
std::unique_ptr<char[]> hold(std::size_t mb) {
    auto block = std::make_unique<char[]>(mb << 20);
    for (std::size_t i = 0; i < (mb << 20); i += 4096) block[i] = static_cast<char>(i);
    return block;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace

TEST_CASE("median-5 mean") {
    CHECK(median5_mean({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) == 6.0);
    CHECK(median5_mean({10, 9, 8, 7, 6, 5, 4, 3, 2, 1}) == 6.0);
    CHECK(median5_mean(std::vector<double>(12, 42.5)) == 42.5);
    CHECK(median5_mean({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}) == 6.0);
    CHECK(median5_mean({3, 1, 2}) == 2.0);
    CHECK(median5_mean({1, 2, 3, 4, 100}) == 22.0);
    CHECK(error_code_of([] { median5_mean({}); }) == "EmptyTestSet");
}

TEST_CASE("fps uses one clock read before and after each loop") {
    std::mt19937_64 rng(1);
    const PinholeCamera cam = testing::axis_camera(16, 12, 12.0);
    const GaussianCloud cloud = testing::random_cloud(rng, 5, cam);
    const std::vector<PinholeCamera> views(4, cam);
    // loop durations in seconds; one stall and one glitch that the central ranks ignore
    const std::vector<double> durations = {0.1, 0.1, 0.2, 0.1, 5.0, 0.1, 0.1, 0.001, 0.1, 0.1};
    std::vector<double> stamps = {0};
    for (double d : durations) {
        stamps.push_back(stamps.back() + 0.5);  // idle gap between loops is not timed
        stamps.push_back(stamps.back() + d);
    }
    std::size_t reads = 1;
    const auto clock = [&] { return stamps.at(reads++); };
    const FpsMeasurement m = measure_fps(cloud, views, 10, Eigen::Vector3d::Zero(), {}, clock);
    CHECK(reads == stamps.size());
    REQUIRE(m.loop_rates.size() == 10);
    CHECK(m.loop_rates[4] == doctest::Approx(4 / 5.0));
    CHECK(m.fps == doctest::Approx(40.0));

    CHECK(error_code_of([&] { measure_fps(cloud, views, 9, Eigen::Vector3d::Zero()); }) == "InvalidLoops");
    CHECK(error_code_of([&] { measure_fps(cloud, views, 21, Eigen::Vector3d::Zero()); }) == "InvalidLoops");
    CHECK(error_code_of([&] { measure_fps(cloud, {}, 10, Eigen::Vector3d::Zero()); }) == "EmptyTestSet");
}

TEST_CASE("peak memory sampling") {
    const double baseline = resident_mb();
    CHECK(baseline > 0);

    SUBCASE("a block held for two seconds is seen") {
        const MemoryReport r = measure_peak_memory([] {
            const auto block = hold(512);
            std::this_thread::sleep_for(std::chrono::milliseconds(2300));
        });
        CHECK(r.peak_mb >= baseline + 500);
        CHECK(r.samples >= 3);
        if (r.high_water_mb > 0) CHECK(r.high_water_mb >= baseline + 500);
    }
    SUBCASE("an idle task stays near the baseline") {
        const MemoryReport r = measure_peak_memory([] {});
        CHECK(r.peak_mb < baseline + 10);
        CHECK(r.samples >= 1);
    }
    SUBCASE("a staircase reports its top step") {
        const MemoryReport r = measure_peak_memory([] {
            std::vector<std::unique_ptr<char[]>> steps;
            for (int k = 0; k < 3; ++k) {
                steps.push_back(hold(100));
                std::this_thread::sleep_for(std::chrono::milliseconds(1100));
            }
        });
        CHECK(r.peak_mb >= baseline + 290);
        CHECK(r.peak_mb < baseline + 330);
    }
    SUBCASE("task exceptions propagate") {
        CHECK(error_code_of([] { measure_peak_memory([] { throw Error("Boom", "x"); }); }) == "Boom");
    }
}

TEST_CASE("config hash is FNV-1a of the dump") {
    TrainConfig a;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(a.dump())));
    CHECK(config_hash(a) == hex);
    TrainConfig b = a;
    b.seed = 1;
    CHECK(config_hash(b) != config_hash(a));
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("report formats") {
    EvalReport report;
    BenchRow row;
    row.case_name = "mockup";
    row.ssim = 0.9;
    row.psnr = 30;
    row.render_fps = 3.5;
    row.gaussians = 1000;
    report.rows.push_back(row);
    report.environment = EnvironmentInfo::current();
    report.config_hash = config_hash(TrainConfig{});
    report.seed = 7;
    const auto j = report.to_json();
    REQUIRE(j["rows"].size() == 1);
    const auto& r = j["rows"][0];
    for (const char* key : {"method", "case", "ssim", "psnr", "lpips", "train_peak_mem_MB", "train_hwm_MB",
                            "train_time_s", "render_peak_mem_MB", "render_hwm_MB", "render_fps", "gaussians"})
        CHECK(r.contains(key));
    CHECK(r["lpips"].is_null());
    CHECK(j["seed"] == 7);
    CHECK(j["environment"]["threads"].get<int>() >= 1);
    const std::string table = report.to_table();
    for (const char* block : {"Quality", "Training cost", "Inference cost", "mockup"})
        CHECK(table.find(block) != std::string::npos);
}

TEST_CASE("benchmark on a small dataset") {
    testing::TempDir dir;
    write_dataset(dir.path(), testing::tiny_dataset(8, 48, 36, 300), 4);
    BenchOptions opt;
    opt.train.iterations = 20;
    opt.case_name = "tiny";
    opt.fps_width = 64;
    opt.fps_height = 48;
    GaussianCloud model;
    const EvalReport report = run_benchmark(dir.path(), opt, &model);
    REQUIRE(report.rows.size() == 1);
    const BenchRow& row = report.rows[0];
    CHECK(row.case_name == "tiny");
    CHECK(row.gaussians == model.size());
    CHECK(row.psnr > 5);
    CHECK(row.ssim > 0);
    CHECK(row.render_fps > 0);
    CHECK(row.train_time_s > 0);
    CHECK(row.train_peak_mem_mb > 0);
    CHECK(row.render_peak_mem_mb > 0);
    CHECK(report.config_hash == config_hash(opt.train));
}
