#pragma once

#include "rsosplat/camera.hpp"
#include "rsosplat/gaussian.hpp"
#include "rsosplat/raster.hpp"
#include "rsosplat/train.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rsosplat {

/// Monotonic time source in seconds; injectable for tests.
using SecondsClock = std::function<double()>;
double steady_seconds();

/// Average of the five central values of the sorted rates: 0-based ranks
/// k/2 - 2 .. k/2 + 2 (integer division). With fewer than five rates all of
/// them are averaged. Throws EmptyTestSet on an empty list.
double median5_mean(std::vector<double> rates);

struct FpsMeasurement {
    std::vector<double> loop_rates;  // frames per second of each loop
    double fps = 0;
};

/// Renders every view once per loop. The clock is read once before and once
/// after each loop. Throws EmptyTestSet, or InvalidLoops outside [10, 20].
FpsMeasurement measure_fps(const GaussianCloud& cloud, std::span<const PinholeCamera> views, int loops,
                           const Eigen::Vector3d& background, const RasterConfig& config = {},
                           const SecondsClock& clock = steady_seconds);

/// Current resident set size in MB, from /proc/self/statm.
double resident_mb();
/// Kernel-tracked peak resident set size (VmHWM) in MB, 0 when unavailable.
double high_water_mb();

struct MemoryReport {
    double peak_mb = 0;        // largest periodic sample
    double high_water_mb = 0;  // VmHWM after the task
    int samples = 0;
};

/// Runs task on the calling thread while a sampler thread records the
/// resident size at start, every interval, and once the task ends. Resets
/// the kernel high-water mark first when the platform allows it.
MemoryReport measure_peak_memory(const std::function<void()>& task,
                                 std::chrono::milliseconds interval = std::chrono::seconds(1));

struct BenchRow {
    std::string method = "3DGS (CPU)";
    std::string case_name;
    double ssim = 0;
    double psnr = 0;
    std::optional<double> lpips;  // not computed
    double train_peak_mem_mb = 0;
    double train_hwm_mb = 0;
    double train_time_s = 0;
    double render_peak_mem_mb = 0;
    double render_hwm_mb = 0;
    double render_fps = 0;
    Eigen::Index gaussians = 0;
};

struct EnvironmentInfo {
    std::string cpu;
    int threads = 0;
    std::string compiler;
    std::string build_flags;

    static EnvironmentInfo current();
};

struct EvalReport {
    std::vector<BenchRow> rows;
    EnvironmentInfo environment;
    std::string config_hash;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    /// Three aligned blocks: quality, training cost and inference cost.
    std::string to_table() const;
};

/// 64-bit FNV-1a of the config dump, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

struct BenchOptions {
    TrainConfig train;
    std::string case_name = "case";
    std::string method = "3DGS (CPU)";
    int fps_loops = 10;
    int fps_width = 640;
    int fps_height = 480;
    std::size_t holdout_every = 8;  // used only without a manifest
};

/// Trains on the dataset's train split under the memory sampler, scores the
/// test split, then measures render memory and FPS at the requested size.
EvalReport run_benchmark(const std::filesystem::path& dataset_root, const BenchOptions& options,
                         GaussianCloud* trained = nullptr);

} // namespace rsosplat
