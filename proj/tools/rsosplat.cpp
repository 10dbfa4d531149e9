// Command-line front end: synth, ingest, train, render, orbit, eval, bench.

#include "rsosplat/bench.hpp"
#include "rsosplat/error.hpp"
#include "rsosplat/metrics.hpp"
#include "rsosplat/parallel.hpp"
#include "rsosplat/ply.hpp"
#include "rsosplat/preprocess.hpp"
#include "rsosplat/synth.hpp"
#include "rsosplat/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace rsosplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

enum class LogLevel { quiet, info, debug };

LogLevel log_level() {
    const char* env = std::getenv("RSOSPLAT_LOG");
    const std::string v = env ? env : "info";
    if (v == "quiet" || v == "error") return LogLevel::quiet;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
}

void log(LogLevel level, const std::string& msg) {
    if (log_level() >= level) std::cerr << msg << '\n';
}

void emit_error(const std::string& code, const std::string& message) {
    std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
}

// Failures that happen while optimizing or rendering rather than from bad input.
bool is_runtime_failure(const std::string& code) {
    static const std::set<std::string> runtime{"NonFiniteGradient", "EmptyCloud", "WriteFailed"};
    return runtime.count(code) > 0;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("WriteFailed", "cannot write " + path.string());
}

struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> iterations;
    bool print_config = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key = value training config file");
        cmd->add_option("--set", overrides, "override one config key, key=value (repeatable)");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--iterations", iterations, "training iterations");
        cmd->add_flag("--print-config", print_config, "print the effective config and exit");
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_file.empty()) cfg.load_file(config_file);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw Error("BadConfigValue", "--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed) cfg.seed = *seed;
        if (iterations) cfg.iterations = *iterations;
        cfg.validate();
        return cfg;
    }
};

std::vector<std::size_t> select_views(const Dataset& data, const std::string& split) {
    if (split == "test") return data.split.test;
    if (split == "train") return data.split.train;
    std::vector<std::size_t> all(data.bundle.views.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian splatting reconstruction, rendering and benchmarking"};
    app.require_subcommand(0, 1);
    int threads = 0;
    bool print_defaults = false;
    app.add_option("--threads", threads, "worker threads (default: hardware concurrency)")->check(CLI::NonNegativeNumber);
    app.add_flag("--print-config", print_defaults, "print the default training config and exit");

    // synth
    auto* synth = app.add_subcommand("synth", "ray-trace the mock-up scene into a COLMAP-style dataset");
    SynthOptions so;
    std::string synth_out;
    std::size_t synth_holdout = 8;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--views", so.views, "cameras on the ring")->capture_default_str();
    synth->add_option("--width", so.width, "image width")->capture_default_str();
    synth->add_option("--height", so.height, "image height")->capture_default_str();
    synth->add_option("--radius", so.ring_radius, "ring radius")->capture_default_str();
    synth->add_option("--elevation", so.ring_height, "ring height above the target")->capture_default_str();
    synth->add_option("--fov", so.fov_deg, "horizontal field of view, degrees")->capture_default_str();
    synth->add_option("--points", so.points, "surface samples before visibility culling")->capture_default_str();
    synth->add_option("--noise", so.noise_fraction, "point noise sigma as a fraction of scene extent")
        ->capture_default_str();
    synth->add_option("--seed", so.seed, "sampling seed")->capture_default_str();
    synth->add_option("--holdout", synth_holdout, "hold out every k-th view")->capture_default_str();

    // ingest
    auto* ingest = app.add_subcommand("ingest", "preprocess a COLMAP dataset into a self-contained copy");
    std::string ingest_src, ingest_out;
    bool ingest_key = false;
    std::optional<int> ingest_w, ingest_h;
    std::size_t ingest_holdout = 8;
    ingest->add_option("--src", ingest_src, "COLMAP dataset root (sparse model + images/)")->required();
    ingest->add_option("--out", ingest_out, "output dataset directory")->required();
    ingest->add_flag("--chroma-key", ingest_key, "replace green-screen pixels with black");
    ingest->add_option("--width", ingest_w, "resize width");
    ingest->add_option("--height", ingest_h, "resize height");
    ingest->add_option("--holdout", ingest_holdout, "hold out every k-th view")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "optimize a Gaussian cloud against a dataset");
    std::string train_data, train_out;
    ConfigFlags train_flags;
    train_cmd->add_option("--data", train_data, "dataset directory");
    train_cmd->add_option("--out", train_out, "output directory");
    train_flags.attach(train_cmd);

    // render
    auto* render_cmd = app.add_subcommand("render", "render one dataset view from a model");
    std::string render_model, render_data, render_out, render_raw, render_view;
    render_cmd->add_option("--model", render_model, "PLY model")->required();
    render_cmd->add_option("--data", render_data, "dataset providing the camera")->required();
    render_cmd->add_option("--view", render_view, "view name or index")->required();
    render_cmd->add_option("--out", render_out, "output PNG")->required();
    render_cmd->add_option("--raw", render_raw, "also write a float64 RGB+alpha dump");

    // orbit
    auto* orbit = app.add_subcommand("orbit", "render a ring of novel views as numbered PNGs");
    std::string orbit_model, orbit_out;
    int orbit_n = 36, orbit_frames = 0, orbit_w = 640, orbit_h = 480;
    double orbit_radius = 2.5, orbit_elev = 0.5, orbit_fov = 50;
    std::vector<double> orbit_target{0, 0, 0};
    orbit->add_option("--model", orbit_model, "PLY model")->required();
    orbit->add_option("--out", orbit_out, "output directory")->required();
    orbit->add_option("--n", orbit_n, "views per full turn")->capture_default_str()->check(CLI::PositiveNumber);
    orbit->add_option("--frames", orbit_frames, "frames to render, continuing past a full turn (default n)")
        ->check(CLI::NonNegativeNumber);
    orbit->add_option("--radius", orbit_radius, "ring radius")->capture_default_str();
    orbit->add_option("--elevation", orbit_elev, "ring height above the target")->capture_default_str();
    orbit->add_option("--target", orbit_target, "look-at point x y z")->expected(3)->capture_default_str();
    orbit->add_option("--width", orbit_w, "frame width")->capture_default_str();
    orbit->add_option("--height", orbit_h, "frame height")->capture_default_str();
    orbit->add_option("--fov", orbit_fov, "horizontal field of view, degrees")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "score a model against a dataset split");
    std::string eval_model, eval_data, eval_out, eval_split = "test";
    eval->add_option("--model", eval_model, "PLY model")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--split", eval_split, "test, train or all")
        ->check(CLI::IsMember({"test", "train", "all"}))
        ->capture_default_str();
    eval->add_option("--out", eval_out, "directory for metrics.json and per_view.csv");

    // bench
    auto* bench = app.add_subcommand("bench", "train, evaluate and measure cost on a dataset");
    std::string bench_data, bench_out, bench_case = "case";
    BenchOptions bench_opts;
    ConfigFlags bench_flags;
    bench->add_option("--data", bench_data, "dataset directory");
    bench->add_option("--out", bench_out, "output directory for report.json, report.txt and model.ply");
    bench->add_option("--case", bench_case, "case label")->capture_default_str();
    bench->add_option("--fps-loops", bench_opts.fps_loops, "render loops, 10 to 20")
        ->check(CLI::Range(10, 20))
        ->capture_default_str();
    bench->add_option("--fps-width", bench_opts.fps_width, "FPS render width")->capture_default_str();
    bench->add_option("--fps-height", bench_opts.fps_height, "FPS render height")->capture_default_str();
    bench_flags.attach(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("BadArguments", e.what());
        return kExitInput;
    }

    try {
        set_thread_count(threads);

        if (print_defaults) {
            std::cout << TrainConfig{}.dump();
            return kExitOk;
        }

        if (*synth) {
            const SfmBundle bundle = make_dataset(mockup_scene(), so);
            write_dataset(synth_out, bundle, synth_holdout,
                          {{"views", so.views}, {"seed", so.seed}, {"noise_fraction", so.noise_fraction}});
            log(LogLevel::info, "wrote " + std::to_string(bundle.views.size()) + " views and " +
                                    std::to_string(bundle.points.size()) + " points to " + synth_out);
            return kExitOk;
        }

        if (*ingest) {
            PreprocessOptions opts;
            if (ingest_key) opts.chroma_key = ChromaKeyConfig{};
            if (ingest_w.has_value() != ingest_h.has_value())
                throw Error("BadArguments", "--width and --height go together");
            if (ingest_w) opts.size = std::make_pair(*ingest_w, *ingest_h);
            const Manifest m = ingest_dataset(ingest_src, ingest_out, opts, ingest_holdout);
            log(LogLevel::info, "ingested " + std::to_string(m.views.size()) + " views into " + ingest_out);
            return kExitOk;
        }

        if (*train_cmd) {
            const TrainConfig cfg = train_flags.resolve();
            if (train_flags.print_config) {
                std::cout << cfg.dump();
                return kExitOk;
            }
            if (train_data.empty() || train_out.empty()) throw Error("BadArguments", "train needs --data and --out");
            const Dataset data = load_dataset(train_data);
            const fs::path out = train_out;
            fs::create_directories(out / "checkpoints");
            write_text(out / "config.txt", cfg.dump());

            TrainCallbacks cb;
            cb.checkpoint = [&](int it, const GaussianCloud& cloud) {
                char name[32];
                std::snprintf(name, sizeof name, "iter_%06d.ply", it);
                write_ply(out / "checkpoints" / name, cloud);
            };
            cb.progress = [](const LossRecord& r) {
                if (r.iteration % 100 == 0 || log_level() == LogLevel::debug)
                    log(LogLevel::info, "iter " + std::to_string(r.iteration) + " loss " + std::to_string(r.total) +
                                            " gaussians " + std::to_string(r.gaussians));
            };
            const TrainResult result = train(data.bundle, data.split.train, cfg, cb);
            write_ply(out / "model.ply", result.cloud);
            write_text(out / "loss.csv", loss_history_csv(result.state.history));
            log(LogLevel::info, "trained " + std::to_string(result.cloud.size()) + " Gaussians in " +
                                    std::to_string(result.seconds) + " s");
            return kExitOk;
        }

        if (*render_cmd) {
            const GaussianCloud cloud = read_ply(render_model);
            const Dataset data = load_dataset(render_data);
            std::optional<std::size_t> index;
            for (std::size_t i = 0; i < data.bundle.views.size(); ++i)
                if (data.bundle.views[i].name == render_view) index = i;
            if (!index) {
                try {
                    std::size_t used = 0;
                    const auto i = std::stoul(render_view, &used);
                    if (used == render_view.size() && i < data.bundle.views.size()) index = i;
                } catch (const std::exception&) {
                }
            }
            if (!index) throw Error("UnknownView", "no view named or numbered '" + render_view + "'");
            TrainConfig cfg;
            const RenderedView view = render(cloud, data.bundle.camera_for(data.bundle.views[*index]),
                                             cfg.background, cfg.raster);
            write_png(render_out, view.image);
            if (!render_raw.empty()) write_raw_render(render_raw, view);
            return kExitOk;
        }

        if (*orbit) {
            const GaussianCloud cloud = read_ply(orbit_model);
            const fs::path out = orbit_out;
            fs::create_directories(out);
            const Intrinsics k = Intrinsics::from_fov(orbit_w, orbit_h, orbit_fov);
            const Eigen::Vector3d target(orbit_target[0], orbit_target[1], orbit_target[2]);
            TrainConfig cfg;
            const int frames = orbit_frames > 0 ? orbit_frames : orbit_n;
            for (int f = 0; f < frames; ++f) {
                const PinholeCamera cam = ring_camera(f, orbit_n, orbit_radius, orbit_elev, target, k);
                char name[32];
                std::snprintf(name, sizeof name, "frame_%03d.png", f);
                write_png(out / name, render(cloud, cam, cfg.background, cfg.raster).image);
            }
            log(LogLevel::info, "wrote " + std::to_string(frames) + " frames to " + orbit_out);
            return kExitOk;
        }

        if (*eval) {
            const GaussianCloud cloud = read_ply(eval_model);
            const Dataset data = load_dataset(eval_data);
            TrainConfig cfg;
            const QualityScores scores =
                evaluate(cloud, data.bundle, select_views(data, eval_split), cfg.background, cfg.raster);
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                write_text(fs::path(eval_out) / "metrics.json", scores.to_json().dump(2) + "\n");
                write_text(fs::path(eval_out) / "per_view.csv", scores.to_csv());
            }
            std::cout << scores.to_json().dump(2) << '\n';
            return kExitOk;
        }

        if (*bench) {
            bench_opts.train = bench_flags.resolve();
            if (bench_flags.print_config) {
                std::cout << bench_opts.train.dump();
                return kExitOk;
            }
            if (bench_data.empty() || bench_out.empty()) throw Error("BadArguments", "bench needs --data and --out");
            bench_opts.case_name = bench_case;
            GaussianCloud model;
            const EvalReport report = run_benchmark(bench_data, bench_opts, &model);
            fs::create_directories(bench_out);
            write_text(fs::path(bench_out) / "report.json", report.to_json().dump(2) + "\n");
            write_text(fs::path(bench_out) / "report.txt", report.to_table());
            write_ply(fs::path(bench_out) / "model.ply", model);
            std::cout << report.to_table();
            return kExitOk;
        }

        std::cout << app.help();
        return kExitOk;
    } catch (const Error& e) {
        emit_error(e.code(), e.what());
        return is_runtime_failure(e.code()) ? kExitRuntime : kExitInput;
    } catch (const std::exception& e) {
        emit_error("InternalError", e.what());
        return kExitRuntime;
    }
}
