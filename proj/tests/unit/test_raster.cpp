#include "rsosplat/error.hpp"
#include "rsosplat/parallel.hpp"
#include "rsosplat/raster.hpp"

#include "support/error_code.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace rsosplat;
using rsosplat::testing::axis_camera;
using rsosplat::testing::error_code_of;

namespace {

constexpr double kC0 = 0.28209479177387814;

/// Degree-0 Gaussian with an isotropic world sigma.
GaussianCloud one_gaussian(const Eigen::Vector3d& mean, double sigma, double opacity_logit,
                           const Eigen::Vector3d& color) {
    GaussianCloud c;
    c.resize(1);
    c.sh.setZero();
    c.means.row(0) = mean.transpose();
    c.log_scales.setConstant(std::log(sigma));
    c.rotations.row(0) << 1, 0, 0, 0;
    c.opacity_logits[0] = opacity_logit;
    for (int ch = 0; ch < 3; ++ch) c.sh(0, ch * 16) = (color[ch] - 0.5) / kC0;
    return c;
}

/// 8x8 camera whose principal point is the center of pixel (4, 4).
PinholeCamera pixel_centered_camera() {
    PinholeCamera cam = axis_camera(8, 8, 10.0);
    cam.cx = cam.cy = 4.5;
    return cam;
}

double max_abs_diff(const RenderedView& a, const RenderedView& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.image.pixels.size(); ++i)
        m = std::max(m, std::abs(a.image.pixels[i] - b.image.pixels[i]));
    for (std::size_t i = 0; i < a.alpha.size(); ++i) m = std::max(m, std::abs(a.alpha[i] - b.alpha[i]));
    return m;
}

} // namespace

TEST_CASE("empty scene renders the background with zero alpha") {
    GaussianCloud empty;
    empty.resize(0);
    const Eigen::Vector3d bg(0.2, 0.4, 0.6);
    const RenderedView v = render(empty, axis_camera(20, 10, 15.0), bg);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x) CHECK(v.image.rgb(x, y) == bg);
    for (double a : v.alpha) CHECK(a == 0.0);
}

TEST_CASE("single splat at half opacity over black") {
    const auto cloud = one_gaussian({0, 0, 3}, 0.05, 0.0, {1, 1, 1});
    const RenderedView v = render(cloud, pixel_centered_camera(), Eigen::Vector3d::Zero());
    CHECK(v.alpha[4 * 8 + 4] == doctest::Approx(0.5).epsilon(1e-12));
    for (int c = 0; c < 3; ++c) CHECK(v.image.at(4, 4, c) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("opaque blue behind half-transparent red") {
    GaussianCloud cloud = one_gaussian({0, 0, 2}, 0.05, 0.0, {1, 0, 0});
    cloud.append(one_gaussian({0, 0, 4}, 0.05, 40.0, {0, 0, 1}));
    RasterConfig cfg;
    cfg.alpha_cap = 1.0;
    const RenderedView v = render(cloud, pixel_centered_camera(), Eigen::Vector3d(0.3, 0.3, 0.3), cfg);
    CHECK(v.image.at(4, 4, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(v.image.at(4, 4, 1)) < 1e-12);
    CHECK(v.image.at(4, 4, 2) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(v.alpha[4 * 8 + 4] == 1.0);
}

TEST_CASE("projection of an on-axis isotropic Gaussian") {
    const double sigma = 0.1, z = 4.0, f = 200.0;
    const auto cloud = one_gaussian({0, 0, z}, sigma, 0.0, {0.5, 0.5, 0.5});
    RasterConfig cfg;
    const auto splats = project(cloud, axis_camera(64, 48, f), cfg);
    REQUIRE(splats.size() == 1);
    const auto& s = splats[0];
    CHECK(s.mean.x() == doctest::Approx(32.0));
    CHECK(s.mean.y() == doctest::Approx(24.0));
    CHECK(s.depth == doctest::Approx(z));
    const double var = std::pow(f * sigma / z, 2) + cfg.dilation;
    CHECK(s.cov(0, 0) == doctest::Approx(var).epsilon(1e-12));
    CHECK(s.cov(1, 1) == doctest::Approx(var).epsilon(1e-12));
    CHECK(std::abs(s.cov(0, 1)) < 1e-12);
    CHECK(s.conic.x() == doctest::Approx(1 / var).epsilon(1e-12));
    CHECK(s.radius == doctest::Approx(3 * std::sqrt(var)).epsilon(1e-12));
    CHECK(s.opacity == doctest::Approx(0.5));
}

TEST_CASE("culling") {
    const PinholeCamera cam = axis_camera(32, 32, 30.0);
    CHECK(project(one_gaussian({0, 0, -1}, 0.1, 0, {1, 1, 1}), cam).empty());
    CHECK(project(one_gaussian({0, 0, 0.001}, 0.1, 0, {1, 1, 1}), cam).empty());
    CHECK(project(one_gaussian({50, 0, 2}, 0.01, 0, {1, 1, 1}), cam).empty());
    CHECK(project(one_gaussian({0, 0, 2}, 0.01, 0, {1, 1, 1}), cam).size() == 1);
}

TEST_CASE("binning assigns splats to overlapped tiles in depth order") {
    auto splat = [](int index, double x, double y, double radius, double depth) {
        SplatProjection s;
        s.index = index;
        s.mean = {x, y};
        s.radius = radius;
        s.depth = depth;
        return s;
    };
    std::vector<SplatProjection> splats = {splat(0, 8, 8, 1, 3.0), splat(1, 16, 16, 4, 2.0),
                                           splat(2, 40, 8, 2, 1.0), splat(3, 17, 17, 1, 2.0)};
    const TileBins bins = bin_and_sort(splats, 48, 32);
    REQUIRE(bins.tiles_x == 3);
    REQUIRE(bins.tiles_y == 2);
    auto ids = [&](int tx, int ty) {
        std::vector<int> out;
        for (auto e : bins.tile(tx, ty)) out.push_back(splats[e].index);
        return out;
    };
    CHECK(ids(0, 0) == std::vector<int>{1, 0});
    CHECK(ids(1, 0) == std::vector<int>{1});
    CHECK(ids(0, 1) == std::vector<int>{1});
    CHECK(ids(1, 1) == std::vector<int>{1, 3});
    CHECK(ids(2, 0) == std::vector<int>{2});
    CHECK(ids(2, 1).empty());
}

TEST_CASE("bins hold exactly the overlapped tiles, sorted by depth then index") {
    std::mt19937_64 rng(5);
    const PinholeCamera cam = axis_camera(70, 45, 60.0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto cloud = testing::random_cloud(rng, 200, cam);
        const auto splats = project(cloud, cam);
        const TileBins bins = bin_and_sort(splats, cam.width, cam.height);
        std::vector<int> seen(splats.size(), 0);
        for (int ty = 0; ty < bins.tiles_y; ++ty)
            for (int tx = 0; tx < bins.tiles_x; ++tx) {
                const auto list = bins.tile(tx, ty);
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const auto& s = splats[list[k]];
                    const TileRect r = tile_rect(s, bins.tiles_x, bins.tiles_y, bins.tile_size);
                    CHECK((tx >= r.x0 && tx <= r.x1 && ty >= r.y0 && ty <= r.y1));
                    ++seen[list[k]];
                    if (k > 0) {
                        const auto& p = splats[list[k - 1]];
                        CHECK((p.depth < s.depth || (p.depth == s.depth && p.index < s.index)));
                    }
                }
            }
        for (std::size_t i = 0; i < splats.size(); ++i) {
            const TileRect r = tile_rect(splats[i], bins.tiles_x, bins.tiles_y, bins.tile_size);
            const int expected = r.empty() ? 0 : (r.x1 - r.x0 + 1) * (r.y1 - r.y0 + 1);
            CHECK(seen[i] == expected);
        }
    }
}

TEST_CASE("tiled render equals the per-pixel reference") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = 24 + trial % 17, h = 20 + trial % 13;
        const PinholeCamera cam = axis_camera(w, h, 25.0 + trial);
        const int n = 1 + static_cast<int>(rng() % 100);
        auto cloud = testing::random_cloud(rng, n, cam);
        cloud.sh_degree = trial % 4;
        const Eigen::Vector3d bg(0.1, 0.7, 0.3);
        const double diff = max_abs_diff(render(cloud, cam, bg), testing::naive_render(cloud, cam, bg));
        CHECK(diff <= 1e-12);
    }
}

TEST_CASE("analytic gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto scene = testing::smooth_scene(seed, 1 + static_cast<int>(seed % 5));
        const auto res = testing::check_gradients(scene);
        INFO("seed ", seed, ": ", res.first_failure);
        CHECK(res.failed == 0);
        CHECK(res.checked > 0);
    }
}

TEST_CASE("gradients at lower SH degrees and without an alpha term") {
    for (int degree = 0; degree < 3; ++degree) {
        auto scene = testing::smooth_scene(100 + degree, 3);
        scene.cloud.sh_degree = degree;
        std::fill(scene.d_alpha.begin(), scene.d_alpha.end(), 0.0);
        const auto res = testing::check_gradients(scene);
        INFO("degree ", degree, ": ", res.first_failure);
        CHECK(res.failed == 0);
    }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    const auto scene = testing::smooth_scene(3, 4);
    const RenderState state = render_with_state(scene.cloud, scene.camera, scene.background);
    const CloudGradients g = blend_backward(scene.cloud, state, ImageRGB(8, 8), {});
    CHECK(g.means.isZero(0));
    CHECK(g.log_scales.isZero(0));
    CHECK(g.rotations.isZero(0));
    CHECK(g.opacity_logits.isZero(0));
    CHECK(g.sh.isZero(0));
    CHECK(g.screen_grad_norm.isZero(0));
}

TEST_CASE("non-finite upstream gradient is reported") {
    const auto scene = testing::smooth_scene(4, 2);
    const RenderState state = render_with_state(scene.cloud, scene.camera, scene.background);
    ImageRGB d(8, 8);
    d.at(4, 4, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK(error_code_of([&] { blend_backward(scene.cloud, state, d, {}); }) == "NonFiniteGradient");
}

TEST_CASE("render and gradients do not depend on the thread count") {
    std::mt19937_64 rng(21);
    const PinholeCamera cam = axis_camera(96, 64, 80.0);
    const auto cloud = testing::random_cloud(rng, 500, cam);
    ImageRGB d(96, 64);
    std::normal_distribution<double> g;
    for (double& v : d.pixels) v = g(rng);

    const int before = thread_count();
    set_thread_count(1);
    const RenderState s1 = render_with_state(cloud, cam, Eigen::Vector3d::Zero());
    const CloudGradients g1 = blend_backward(cloud, s1, d);
    set_thread_count(4);
    const RenderState s4 = render_with_state(cloud, cam, Eigen::Vector3d::Zero());
    const CloudGradients g4 = blend_backward(cloud, s4, d);
    set_thread_count(before);

    CHECK(s1.view.image == s4.view.image);
    CHECK(s1.view.alpha == s4.view.alpha);
    CHECK(g1.means == g4.means);
    CHECK(g1.log_scales == g4.log_scales);
    CHECK(g1.rotations == g4.rotations);
    CHECK(g1.opacity_logits == g4.opacity_logits);
    CHECK(g1.sh == g4.sh);
    CHECK(g1.screen_grad_norm == g4.screen_grad_norm);
}

TEST_CASE("rendered values stay within bounds") {
    std::mt19937_64 rng(8);
    const PinholeCamera cam = axis_camera(40, 30, 35.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto cloud = testing::random_cloud(rng, 150, cam);
        const RenderedView v = render(cloud, cam, Eigen::Vector3d::Zero());
        CHECK(v.image.in_unit_range());
        for (std::size_t p = 0; p < v.alpha.size(); ++p) {
            CHECK(v.alpha[p] >= 0.0);
            CHECK(v.alpha[p] <= 1.0);
            // over black, no channel can exceed the covered fraction
            for (int c = 0; c < 3; ++c) CHECK(v.image.pixels[p * 3 + c] <= v.alpha[p] + 1e-12);
        }
    }
}

TEST_CASE("removing culled Gaussians leaves the render unchanged") {
    std::mt19937_64 rng(13);
    const PinholeCamera cam = axis_camera(48, 32, 40.0);
    for (int trial = 0; trial < 10; ++trial) {
        auto cloud = testing::random_cloud(rng, 120, cam);
        // push a third of them behind the camera or far to the side
        for (Eigen::Index i = 0; i < cloud.size(); i += 3) cloud.means(i, trial % 2 ? 2 : 0) *= trial % 2 ? -1 : 40;
        const RenderState state = render_with_state(cloud, cam, Eigen::Vector3d(0.5, 0.5, 0.5));
        std::vector<bool> keep(static_cast<std::size_t>(cloud.size()), false);
        for (const auto& s : state.projections) keep[static_cast<std::size_t>(s.index)] = true;
        REQUIRE(state.projections.size() < static_cast<std::size_t>(cloud.size()));
        GaussianCloud kept = cloud;
        kept.filter(keep);
        const RenderedView v = render(kept, cam, Eigen::Vector3d(0.5, 0.5, 0.5));
        CHECK(v.image == state.view.image);
        CHECK(v.alpha == state.view.alpha);
    }
}

TEST_CASE("moving the scene and camera together leaves the render unchanged") {
    std::mt19937_64 rng(17);
    PinholeCamera cam = axis_camera(40, 32, 36.0);
    cam.rotation = Eigen::Vector4d(0.99, 0.05, -0.08, 0.02).normalized();
    for (int trial = 0; trial < 5; ++trial) {
        auto cloud = testing::random_cloud(rng, 80, axis_camera(40, 32, 36.0));
        // express the cloud in world space for the rotated camera
        const Eigen::Matrix3d r = cam.rotation_matrix();
        for (Eigen::Index i = 0; i < cloud.size(); ++i)
            cloud.means.row(i) = (r.transpose() * Eigen::Vector3d(cloud.means.row(i).transpose())).transpose();
        const Eigen::Vector3d shift(1.5, -2.0, 0.75);
        GaussianCloud moved = cloud;
        moved.means.rowwise() += shift.transpose();
        PinholeCamera moved_cam = cam;
        moved_cam.translation = cam.translation - r * shift;
        const Eigen::Vector3d bg(0.2, 0.2, 0.2);
        CHECK(max_abs_diff(render(cloud, cam, bg), render(moved, moved_cam, bg)) < 1e-9);
    }
}

TEST_CASE("visible flags follow culling") {
    GaussianCloud cloud = one_gaussian({0, 0, 2}, 0.05, 0, {1, 1, 1});
    cloud.append(one_gaussian({0, 0, -2}, 0.05, 0, {1, 1, 1}));
    const PinholeCamera cam = axis_camera(16, 16, 20.0);
    const RenderState state = render_with_state(cloud, cam, Eigen::Vector3d::Zero());
    const CloudGradients g = blend_backward(cloud, state, ImageRGB(16, 16, 1.0));
    REQUIRE(g.visible.size() == 2);
    CHECK(g.visible[0]);
    CHECK_FALSE(g.visible[1]);
    CHECK(g.means.row(1).isZero(0));
}

TEST_CASE("raw render dump round trip") {
    std::mt19937_64 rng(2);
    const PinholeCamera cam = axis_camera(23, 17, 20.0);
    const RenderedView v = render(testing::random_cloud(rng, 40, cam), cam, Eigen::Vector3d(0.1, 0.2, 0.3));
    testing::TempDir dir;
    write_raw_render(dir.path() / "v.raw", v);
    CHECK(std::filesystem::file_size(dir.path() / "v.raw") == 8 + 23 * 17 * 4 * 8);
    const RenderedView back = read_raw_render(dir.path() / "v.raw");
    CHECK(back.image == v.image);
    CHECK(back.alpha == v.alpha);
}
