#include "rsosplat/bench.hpp"

#include "rsosplat/error.hpp"
#include "rsosplat/metrics.hpp"
#include "rsosplat/parallel.hpp"
#include "rsosplat/preprocess.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#ifndef RSOSPLAT_BUILD_FLAGS
#define RSOSPLAT_BUILD_FLAGS "unknown"
#endif

namespace rsosplat {

double steady_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

double median5_mean(std::vector<double> rates) {
    if (rates.empty()) throw Error("EmptyTestSet", "no loop rates to average");
    std::sort(rates.begin(), rates.end());
    const std::size_t k = rates.size();
    std::size_t lo = 0, hi = k;
    if (k >= 5) {
        lo = std::min(k / 2 >= 2 ? k / 2 - 2 : 0, k - 5);
        hi = lo + 5;
    }
    double sum = 0;
    for (std::size_t i = lo; i < hi; ++i) sum += rates[i];
    return sum / static_cast<double>(hi - lo);
}

FpsMeasurement measure_fps(const GaussianCloud& cloud, std::span<const PinholeCamera> views, int loops,
                           const Eigen::Vector3d& background, const RasterConfig& config, const SecondsClock& clock) {
    if (views.empty()) throw Error("EmptyTestSet", "FPS measurement needs at least one view");
    if (loops < 10 || loops > 20) throw Error("InvalidLoops", "FPS loops must lie in [10, 20]");
    FpsMeasurement m;
    for (int l = 0; l < loops; ++l) {
        const double start = clock();
        for (const auto& cam : views) {
            const RenderedView frame = render(cloud, cam, background, config);
            (void)frame;
        }
        const double elapsed = clock() - start;
        m.loop_rates.push_back(elapsed > 0 ? static_cast<double>(views.size()) / elapsed
                                           : std::numeric_limits<double>::infinity());
    }
    m.fps = median5_mean(m.loop_rates);
    return m;
}

double resident_mb() {
    std::ifstream in("/proc/self/statm");
    long size = 0, resident = 0;
    if (!(in >> size >> resident)) return 0;
    return static_cast<double>(resident) * static_cast<double>(sysconf(_SC_PAGESIZE)) / (1024.0 * 1024.0);
}

double high_water_mb() {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("VmHWM:", 0) == 0) {
            std::istringstream fields(line.substr(6));
            double kb = 0;
            fields >> kb;
            return kb / 1024.0;
        }
    }
    return 0;
}

MemoryReport measure_peak_memory(const std::function<void()>& task, std::chrono::milliseconds interval) {
    {
        // "5" resets the peak RSS counter; not every kernel or sandbox allows it.
        std::ofstream reset("/proc/self/clear_refs");
        if (reset) reset << "5";
    }

    MemoryReport report;
    std::mutex mutex;
    std::condition_variable wake;
    bool done = false;
    auto sample = [&] {
        report.peak_mb = std::max(report.peak_mb, resident_mb());
        ++report.samples;
    };

    std::thread sampler([&] {
        std::unique_lock lock(mutex);
        sample();
        while (!wake.wait_for(lock, interval, [&] { return done; })) sample();
    });

    std::exception_ptr failure;
    try {
        task();
    } catch (...) {
        failure = std::current_exception();
    }
    {
        std::lock_guard lock(mutex);
        sample();
        done = true;
    }
    wake.notify_all();
    sampler.join();
    report.high_water_mb = high_water_mb();
    if (failure) std::rethrow_exception(failure);
    return report;
}

EnvironmentInfo EnvironmentInfo::current() {
    EnvironmentInfo env;
    std::ifstream cpuinfo("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpuinfo, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) env.cpu = line.substr(line.find_first_not_of(' ', colon + 1));
            break;
        }
    }
    if (env.cpu.empty()) env.cpu = "unknown";
    env.threads = thread_count();
#if defined(__clang__)
    env.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
    env.compiler = "gcc " __VERSION__;
#else
    env.compiler = "unknown";
#endif
    env.build_flags = RSOSPLAT_BUILD_FLAGS;
    return env;
}

std::string config_hash(const TrainConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : config.dump()) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_json.push_back({
            {"method", r.method},
            {"case", r.case_name},
            {"ssim", r.ssim},
            {"psnr", r.psnr},
            {"lpips", r.lpips ? nlohmann::json(*r.lpips) : nlohmann::json(nullptr)},
            {"train_peak_mem_MB", r.train_peak_mem_mb},
            {"train_hwm_MB", r.train_hwm_mb},
            {"train_time_s", r.train_time_s},
            {"render_peak_mem_MB", r.render_peak_mem_mb},
            {"render_hwm_MB", r.render_hwm_mb},
            {"render_fps", r.render_fps},
            {"gaussians", r.gaussians},
        });
    }
    return {
        {"rows", rows_json},
        {"environment",
         {{"cpu", environment.cpu},
          {"threads", environment.threads},
          {"compiler", environment.compiler},
          {"build_flags", environment.build_flags},
          {"memory_note", "peak memory is process resident memory, not GPU VRAM"}}},
        {"config_hash", config_hash},
        {"seed", seed},
    };
}

namespace {

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

/// Left-aligned first column, right-aligned others.
std::string aligned(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> widths;
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (widths.size() <= c) widths.push_back(0);
            widths[c] = std::max(widths[c], row[c].size());
        }
    std::ostringstream out;
    for (const auto& row : cells) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c > 0) out << "  ";
            if (c == 0) out << std::left << std::setw(static_cast<int>(widths[c])) << row[c];
            else out << std::right << std::setw(static_cast<int>(widths[c])) << row[c];
        }
        out << '\n';
    }
    return out.str();
}

} // namespace

std::string EvalReport::to_table() const {
    std::vector<std::vector<std::string>> quality{{"Method", "Case", "SSIM", "PSNR", "LPIPS"}};
    std::vector<std::vector<std::string>> training{{"Method", "Case", "Peak mem (MB)*", "Training time (s)"}};
    std::vector<std::vector<std::string>> inference{{"Method", "Case", "Peak mem (MB)*", "FPS"}};
    for (const auto& r : rows) {
        quality.push_back({r.method, r.case_name, fixed(r.ssim, 4), fixed(r.psnr, 2), r.lpips ? fixed(*r.lpips, 4) : "n/a"});
        training.push_back({r.method, r.case_name, fixed(r.train_peak_mem_mb, 1), fixed(r.train_time_s, 1)});
        inference.push_back({r.method, r.case_name, fixed(r.render_peak_mem_mb, 1), fixed(r.render_fps, 2)});
    }
    std::ostringstream out;
    out << "Quality\n" << aligned(quality) << "\nTraining cost\n" << aligned(training) << "\nInference cost\n"
        << aligned(inference) << "\n* process resident memory sampled at 1 Hz; the GPU reference reports VRAM.\n"
        << "CPU: " << environment.cpu << ", threads: " << environment.threads << ", config " << config_hash
        << ", seed " << seed << '\n';
    return out.str();
}

EvalReport run_benchmark(const std::filesystem::path& dataset_root, const BenchOptions& options,
                         GaussianCloud* trained) {
    const Dataset data = load_dataset(dataset_root, options.holdout_every);
    if (data.split.test.empty()) throw Error("EmptyTestSet", "dataset has no test views");

    BenchRow row;
    row.method = options.method;
    row.case_name = options.case_name;

    TrainResult result;
    const MemoryReport train_mem =
        measure_peak_memory([&] { result = train(data.bundle, data.split.train, options.train); });
    row.train_peak_mem_mb = train_mem.peak_mb;
    row.train_hwm_mb = train_mem.high_water_mb;
    row.train_time_s = result.seconds;
    row.gaussians = result.cloud.size();

    const QualityScores scores =
        evaluate(result.cloud, data.bundle, data.split.test, options.train.background, options.train.raster);
    row.ssim = scores.mean_ssim;
    row.psnr = scores.mean_psnr;

    std::vector<PinholeCamera> cams;
    for (std::size_t i : data.split.test)
        cams.push_back(data.bundle.camera_for(data.bundle.views[i]).scaled_to(options.fps_width, options.fps_height));
    FpsMeasurement fps;
    const MemoryReport render_mem = measure_peak_memory([&] {
        fps = measure_fps(result.cloud, cams, options.fps_loops, options.train.background, options.train.raster);
    });
    row.render_fps = fps.fps;
    row.render_peak_mem_mb = render_mem.peak_mb;
    row.render_hwm_mb = render_mem.high_water_mb;

    EvalReport report;
    report.rows.push_back(row);
    report.environment = EnvironmentInfo::current();
    report.config_hash = config_hash(options.train);
    report.seed = options.train.seed;
    if (trained) *trained = std::move(result.cloud);
    return report;
}

} // namespace rsosplat
