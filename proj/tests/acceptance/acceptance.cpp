// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--only N ...] [--threads T]

#include "rsosplat/bench.hpp"
#include "rsosplat/colmap.hpp"
#include "rsosplat/metrics.hpp"
#include "rsosplat/parallel.hpp"
#include "rsosplat/ply.hpp"
#include "rsosplat/preprocess.hpp"
#include "rsosplat/synth.hpp"
#include "rsosplat/train.hpp"

#include "support/error_code.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/scenes.hpp"
#include "support/temp_dir.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

using namespace rsosplat;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr double kMinPsnr = 22.0;
constexpr double kMinSsim = 0.85;
constexpr double kMaxTrainSeconds = 30 * 60;
constexpr int kGradScenes = 50;
constexpr double kGradRel = 1e-3, kGradAbs = 1e-6, kGradStep = 1e-4;
constexpr double kMaxGradSecondsPerScene = 1.0;
constexpr int kOracleScenes = 1000;
constexpr double kOracleTol = 1e-5;
constexpr double kSsimGradRel = 1e-4, kSsimStep = 1e-2;
constexpr double kConstSsim = 9.999e-5, kConstSsimTol = 1e-9;
constexpr double kHalfErrorPsnr = 6.0206, kPsnrTol = 1e-4;
constexpr double kMinFps = 2.0;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1 and 7 share the trained mock-up model.

struct MockupRun {
    Dataset data;
    TrainResult result;
    QualityScores scores;
};

const MockupRun& mockup_run() {
    static std::optional<MockupRun> run;
    if (run) return *run;
    testing::TempDir dir("rsosplat-accept");
    SynthOptions opt;  // mock-up defaults: 36 views at 256x192
    write_dataset(dir.path(), make_dataset(mockup_scene(), opt), 6);
    run.emplace();
    run->data = load_dataset(dir.path());
    TrainConfig cfg;
    cfg.iterations = 7000;
    std::cerr << "training the mock-up: " << run->data.split.train.size() << " train / "
              << run->data.split.test.size() << " test views, " << cfg.iterations << " iterations\n";
    TrainCallbacks cb;
    cb.progress = [](const LossRecord& r) {
        if (r.iteration % 500 == 0)
            std::cerr << "  iter " << r.iteration << " loss " << fmt(r.total, 5) << " gaussians " << r.gaussians
                      << " " << fmt(r.elapsed_s, 0) << " s\n";
    };
    run->result = train(run->data.bundle, run->data.split.train, cfg, cb);
    run->scores = evaluate(run->result.cloud, run->data.bundle, run->data.split.test, cfg.background);
    return *run;
}

Outcome criterion_1() {
    Outcome o;
    const MockupRun& run = mockup_run();
    const auto& split = run.data.split;
    o.require(split.train.size() == 30 && split.test.size() == 6, "30/6 split");
    o.require(run.scores.mean_psnr >= kMinPsnr, "PSNR");
    o.require(run.scores.mean_ssim >= kMinSsim, "SSIM");
    o.require(run.result.seconds <= kMaxTrainSeconds, "runtime");
    o.detail << "held-out PSNR " << fmt(run.scores.mean_psnr, 2) << " dB (>= " << kMinPsnr << "), SSIM "
             << fmt(run.scores.mean_ssim) << " (>= " << kMinSsim << "), training " << fmt(run.result.seconds, 1)
             << " s (<= " << kMaxTrainSeconds << ") on " << thread_count() << " threads, "
             << run.result.cloud.size() << " Gaussians";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_2() {
    Outcome o;
    int failed_scenes = 0, checked = 0;
    double worst = 0, slowest = 0;
    std::string first;
    for (int s = 0; s < kGradScenes; ++s) {
        const auto scene = testing::smooth_scene(1000 + static_cast<std::uint64_t>(s), 1 + s % 5);
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = testing::check_gradients(scene, kGradStep, kGradRel, kGradAbs);
        slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        checked += res.checked;
        worst = std::max(worst, res.worst_excess);
        if (res.failed > 0) {
            if (failed_scenes++ == 0) first = res.first_failure;
        }
    }
    o.require(failed_scenes == 0, first);
    o.require(slowest < kMaxGradSecondsPerScene, "time per scene");
    o.detail << kGradScenes << " scenes, " << checked << " parameters, worst error " << fmt(worst, 3)
             << " of tolerance, slowest scene " << fmt(slowest, 3) << " s (< " << kMaxGradSecondsPerScene << ")";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_3() {
    Outcome o;
    std::mt19937_64 rng(3);
    double worst = 0;
    for (int s = 0; s < kOracleScenes; ++s) {
        const PinholeCamera cam = testing::axis_camera(32, 32, 20.0 + static_cast<double>(rng() % 30));
        auto cloud = testing::random_cloud(rng, 1 + static_cast<int>(rng() % 100), cam);
        cloud.sh_degree = s % 4;
        const Eigen::Vector3d bg = Eigen::Vector3d::Constant(static_cast<double>(s % 3) / 2);
        const RenderedView a = render(cloud, cam, bg);
        const RenderedView b = testing::naive_render(cloud, cam, bg);
        for (std::size_t i = 0; i < a.image.pixels.size(); ++i)
            worst = std::max(worst, std::abs(a.image.pixels[i] - b.image.pixels[i]));
    }
    o.require(worst <= kOracleTol, "tiled vs per-pixel");
    o.detail << kOracleScenes << " scenes at 32x32, max channel difference " << worst << " (<= " << kOracleTol << ")";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_4() {
    Outcome o;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageRGB truth(32, 24);
    for (double& v : truth.pixels) v = u(rng);
    const double same = photometric_loss(truth, truth, 0.2).total;
    const double example = combined_loss(0.5, 0.0, 0.2);
    o.require(same == 0.0, "loss(truth, truth) = 0");
    o.require(example == 0.5, "lambda 0.2, L1 0.5, SSIM 0 gives 0.5");

    // SSIM gradient against a five-point difference; some edge pixels have
    // gradients near 1e-9, below what a two-point difference resolves.
    ImageRGB a(16, 16), b(16, 16);
    for (double& v : b.pixels) v = u(rng);
    for (std::size_t i = 0; i < a.pixels.size(); ++i) a.pixels[i] = std::clamp(b.pixels[i] + 0.2 * (u(rng) - 0.5), 0.0, 1.0);
    const SsimWithGradient sg = ssim_with_gradient(a, b);
    double worst = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        auto at = [&](double d) {
            ImageRGB p = a;
            p.pixels[i] += d;
            return ssim(p, b);
        };
        const double h = kSsimStep;
        const double fd = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
        const double scale = std::max({std::abs(fd), std::abs(sg.gradient.pixels[i]), 1e-12});
        worst = std::max(worst, std::abs(fd - sg.gradient.pixels[i]) / scale);
    }
    o.require(worst <= kSsimGradRel, "SSIM gradient");
    o.detail << "loss(truth, truth) = " << same << ", example = " << example << ", SSIM gradient max relative error "
             << worst << " (<= " << kSsimGradRel << ")";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_5() {
    Outcome o;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageRGB a(40, 30);
    for (double& v : a.pixels) v = u(rng);
    const double self = ssim(a, a);
    const double constant = ssim(ImageRGB(40, 30, 0.0), ImageRGB(40, 30, 1.0));
    const double half = psnr(ImageRGB(40, 30, 0.25), ImageRGB(40, 30, 0.75));
    o.require(self == 1.0, "SSIM(a, a) = 1");
    o.require(std::abs(constant - kConstSsim) <= kConstSsimTol, "constant closed form");
    o.require(std::abs(half - kHalfErrorPsnr) <= kPsnrTol, "PSNR of 0.5 error");
    o.detail << "SSIM(a, a) = " << self << ", SSIM(0, 1) = " << constant << ", PSNR at 0.5 error = " << fmt(half, 6)
             << " dB";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_6() {
    Outcome o;
    int fixtures = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        testing::TempDir dir("rsosplat-accept");
        const SfmBundle b = testing::random_bundle(seed, 1 + static_cast<int>(seed % 3), 15, 200);
        for (ColmapFormat f : {ColmapFormat::text, ColmapFormat::binary}) {
            const fs::path first = dir.path() / (f == ColmapFormat::text ? "t1" : "b1");
            const fs::path second = dir.path() / (f == ColmapFormat::text ? "t2" : "b2");
            write_sparse_model(first, b, f);
            const SfmBundle parsed = load_sparse_model(first);
            write_sparse_model(second, parsed, f);
            o.require(parsed == b && load_sparse_model(second) == parsed, "COLMAP round trip");
            ++fixtures;
        }
    }
    testing::TempDir dir("rsosplat-accept");
    const SfmBundle synth = testing::tiny_dataset(12, 64, 48, 800, 6);
    write_dataset(dir.path() / "synth", synth, 8);
    ingest_dataset(dir.path() / "synth", dir.path() / "ingested", {}, 8);
    const Dataset back = load_dataset(dir.path() / "ingested");
    o.require(back.bundle == synth, "synth to ingest bundle equality");
    bool images = true;
    for (std::size_t v = 0; v < synth.views.size(); ++v)
        images = images && back.bundle.views[v].image == quantize_8bit(*synth.views[v].image);
    o.require(images, "ingested images");
    o.detail << fixtures << " COLMAP fixtures round-tripped, synth bundle of " << synth.points.size()
             << " points and " << synth.views.size() << " views ingested unchanged";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_7() {
    Outcome o;
    // Injected clock: loop k takes durations[k] seconds for 3 views. All
    // times are dyadic, so clock differences reproduce the durations exactly.
    const std::vector<double> durations = {0.5,     0.25,   0.3125,  0.1875,  9.0,       0.375,
                                           0.125,   0.34375, 0.4375, 0.15625, 0.0078125, 0.28125};
    std::vector<double> stamps = {100};
    for (double d : durations) {
        stamps.push_back(stamps.back() + 0.015625);
        stamps.push_back(stamps.back() + d);
    }
    std::size_t next = 1;
    std::vector<double> sorted;
    for (double d : durations) sorted.push_back(3 / d);
    std::sort(sorted.begin(), sorted.end());
    // 12 loops: 0-based ranks 4..8
    const double oracle = (sorted[4] + sorted[5] + sorted[6] + sorted[7] + sorted[8]) / 5;
    const PinholeCamera tiny = testing::axis_camera(8, 8, 8.0);
    std::mt19937_64 rng(7);
    const std::vector<PinholeCamera> three(3, tiny);
    const FpsMeasurement fake = measure_fps(testing::random_cloud(rng, 3, tiny), three,
                                            static_cast<int>(durations.size()), Eigen::Vector3d::Zero(), {},
                                            [&] { return stamps.at(next++); });
    o.require(fake.fps == oracle, "injected clock oracle");

    const MockupRun& run = mockup_run();
    std::vector<PinholeCamera> cams;
    for (std::size_t i : run.data.split.test)
        cams.push_back(run.data.bundle.camera_for(run.data.bundle.views[i]).scaled_to(640, 480));
    const FpsMeasurement real = measure_fps(run.result.cloud, cams, 10, Eigen::Vector3d::Zero());
    o.require(real.fps >= kMinFps, "real FPS");
    o.detail << "injected clock " << fake.fps << " = oracle " << oracle << "; trained model at 640x480: "
             << fmt(real.fps, 2) << " FPS (>= " << kMinFps << ") on " << thread_count() << " threads";
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_8() {
    Outcome o;
    const SfmBundle bundle = testing::tiny_dataset(12, 96, 72, 800, 8);
    const Split split = split_train_test(bundle.views.size(), 4);
    TrainConfig cfg;
    cfg.iterations = 400;
    cfg.densify_from = 100;
    cfg.densify_interval = 100;
    cfg.densify_until = 300;
    cfg.opacity_reset_interval = 200;
    cfg.sh_degree_interval = 100;
    cfg.seed = 8;

    const int saved = thread_count();
    const int many = std::max(3, static_cast<int>(std::thread::hardware_concurrency()));
    std::vector<std::string> plys;
    std::vector<std::pair<double, double>> metrics;
    for (int threads : {1, many, 1, many}) {
        set_thread_count(threads);
        const TrainResult r = train(bundle, split.train, cfg);
        const QualityScores q = evaluate(r.cloud, bundle, split.test, cfg.background);
        plys.push_back(encode_ply(r.cloud));
        metrics.emplace_back(q.mean_psnr, q.mean_ssim);
    }
    set_thread_count(saved);
    bool same = true;
    for (std::size_t k = 1; k < plys.size(); ++k) same = same && plys[k] == plys[0] && metrics[k] == metrics[0];
    o.require(same, "bit-identical runs");
    o.detail << "4 runs (threads 1, " << many << ", 1, " << many << "): PLY " << plys[0].size()
             << " bytes identical, PSNR " << fmt(metrics[0].first, 6) << " SSIM " << fmt(metrics[0].second, 6)
             << " identical";
    return o;
}

// ---------------------------------------------------------------------------

GaussianCloud row_cloud(Eigen::Index n, double sigma, double opacity) {
    GaussianCloud c;
    c.resize(n);
    c.sh.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
        c.means.row(i) << 0.1 * static_cast<double>(i), 0, 0;
        c.rotations.row(i) << 1, 0, 0, 0;
    }
    c.log_scales.setConstant(std::log(sigma));
    c.opacity_logits.setConstant(logit(opacity));
    return c;
}

TrainState state_for(Eigen::Index n) {
    TrainState s;
    s.moments = AdamMoments::zeros(n);
    s.reset_accumulators(n);
    return s;
}

void mark(TrainState& s, Eigen::Index i, double grad) {
    s.grad_accum[i] = 2 * grad;
    s.grad_count[i] = 2;
    s.mean_grad_accum.row(i) << 1, 0, 0;
}

Outcome criterion_9() {
    Outcome o;
    const TrainConfig cfg;
    std::mt19937_64 rng(9);
    int rules = 0;

    {  // clone: small Gaussian above threshold gains a nudged copy
        GaussianCloud c = row_cloud(2, 0.005, 0.5);
        TrainState s = state_for(2);
        mark(s, 0, 1e-3);
        const auto r = densify_and_prune(c, s, cfg, 1.0, rng);
        o.require(r.cloned == 1 && c.size() == 3 && std::abs(c.means(2, 0) + 0.5 * 0.005) < 1e-15 && s.consistent_with(3), "clone");
        ++rules;
    }
    {  // split: large Gaussian replaced by two shrunk children
        GaussianCloud c = row_cloud(2, 0.05, 0.5);
        TrainState s = state_for(2);
        mark(s, 1, 1e-3);
        const auto r = densify_and_prune(c, s, cfg, 1.0, rng);
        const double child = std::log(0.05) - std::log(1.6);
        o.require(r.split == 1 && c.size() == 3 && std::abs(c.log_scales(1, 0) - child) < 1e-12 &&
                      std::abs(c.log_scales(2, 2) - child) < 1e-12 && s.consistent_with(3),
                  "split");
        ++rules;
    }
    {  // prune: alpha 0.001 and oversized Gaussians go
        GaussianCloud c = row_cloud(3, 0.005, 0.5);
        c.opacity_logits[0] = logit(0.001);
        c.log_scales(2, 1) = std::log(0.5);
        TrainState s = state_for(3);
        const auto r = densify_and_prune(c, s, cfg, 1.0, rng);
        o.require(r.pruned == 2 && c.size() == 1 && c.means(0, 0) == 0.1, "prune");
        ++rules;
    }
    {  // opacity reset
        GaussianCloud c = row_cloud(2, 0.01, 0.9);
        TrainState s = state_for(2);
        s.moments.first.opacity_logits.setConstant(3);
        reset_opacity(c, s, 0.01);
        o.require(std::abs(c.opacity(0) - 0.01) < 1e-12 && s.moments.first.opacity_logits.isZero(0), "opacity reset");
        ++rules;
    }
    {  // EmptyCloud
        GaussianCloud c = row_cloud(2, 0.005, 0.001);
        TrainState s = state_for(2);
        o.require(testing::error_code_of([&] { densify_and_prune(c, s, cfg, 1.0, rng); }) == "EmptyCloud",
                  "EmptyCloud");
        ++rules;
    }
    // invariant through 10 cycles with random gradients
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GaussianCloud c = testing::random_cloud(rng, 60, testing::axis_camera(32, 32, 30), 0.002, 0.09);
    TrainState s = state_for(c.size());
    std::vector<Eigen::Index> sizes;
    for (int cycle = 0; cycle < 10; ++cycle) {
        for (Eigen::Index i = 0; i < c.size(); ++i) mark(s, i, 4e-4 * u(rng));
        densify_and_prune(c, s, cfg, 1.0, rng);
        o.require(s.consistent_with(c.size()) && c.all_finite(), "array lengths after cycle " + std::to_string(cycle));
        sizes.push_back(c.size());
    }
    o.detail << rules << " rules hold; sizes over 10 cycles:";
    for (auto n : sizes) o.detail << ' ' << n;
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    int threads = 0;
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 9));
    app.add_option("--threads", threads, "worker threads (default: hardware concurrency)");
    CLI11_PARSE(app, argc, argv);
    set_thread_count(threads);

    const std::vector<Outcome (*)()> criteria = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                                 criterion_6, criterion_7, criterion_8, criterion_9};
    const std::set<int> chosen(only.begin(), only.end());
    int failures = 0;
    for (int k = 1; k <= 9; ++k) {
        if (!chosen.empty() && !chosen.count(k)) continue;
        Outcome out;
        try {
            out = criteria[static_cast<std::size_t>(k - 1)]();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail << "exception: " << e.what();
        }
        failures += !out.pass;
        std::cout << "criterion " << k << ": " << (out.pass ? "PASS" : "FAIL") << "  " << out.detail.str() << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
