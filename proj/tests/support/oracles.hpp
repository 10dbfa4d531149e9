#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include "rsosplat/camera.hpp"
#include "rsosplat/gaussian.hpp"
#include "rsosplat/image.hpp"
#include "rsosplat/raster.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace rsosplat::testing {

/// Camera at the origin looking down +z with the principal point centered.
inline PinholeCamera axis_camera(int width, int height, double focal) {
    PinholeCamera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

/// Rotation matrix written out from the quaternion product q v q*, one basis
/// vector at a time; shares no code with quaternion_to_matrix.
inline Eigen::Matrix3d rotation_by_conjugation(const Eigen::Vector4d& q_in) {
    const Eigen::Vector4d q = q_in.normalized();
    auto mul = [](const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
        return Eigen::Vector4d(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                               a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                               a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                               a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
    };
    const Eigen::Vector4d conj(q[0], -q[1], -q[2], -q[3]);
    Eigen::Matrix3d r;
    for (int c = 0; c < 3; ++c) {
        Eigen::Vector4d v = Eigen::Vector4d::Zero();
        v[c + 1] = 1;
        r.col(c) = mul(mul(q, v), conj).tail<3>();
    }
    return r;
}

/// Per-pixel compositing over one globally sorted splat list, no tiles.
inline RenderedView naive_render(const GaussianCloud& cloud, const PinholeCamera& cam,
                                 const Eigen::Vector3d& background, const RasterConfig& cfg = {}) {
    std::vector<SplatProjection> splats = project(cloud, cam, cfg);
    std::sort(splats.begin(), splats.end(), [](const SplatProjection& a, const SplatProjection& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    RenderedView out;
    out.image = ImageRGB(cam.width, cam.height);
    out.alpha.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Eigen::Vector2d pix(x + 0.5, y + 0.5);
            double t = 1.0;
            Eigen::Vector3d c = Eigen::Vector3d::Zero();
            for (const auto& s : splats) {
                const Eigen::Vector2d d = pix - s.mean;
                if (d.norm() > s.radius) continue;
                const double power = -0.5 * d.dot(s.cov.inverse() * d);
                const double alpha = std::min(cfg.alpha_cap, s.opacity * std::exp(power));
                if (alpha < cfg.alpha_min) continue;
                c += s.color * alpha * t;
                t *= 1 - alpha;
                if (t < cfg.transmittance_min) break;
            }
            out.image.rgb(x, y) = c + t * background;
            out.alpha[static_cast<std::size_t>(y) * cam.width + x] = 1 - t;
        }
    return out;
}

/// Random cloud in front of an axis camera: means with depth in [2, 6],
/// lateral positions spread over the view, random anisotropic shapes,
/// opacities and full degree-3 colors.
inline GaussianCloud random_cloud(std::mt19937_64& rng, int n, const PinholeCamera& cam, double scale_lo = 0.02,
                                  double scale_hi = 0.4) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    GaussianCloud cloud;
    cloud.resize(n);
    cloud.sh_degree = 3;
    cloud.sh.setZero();
    for (int i = 0; i < n; ++i) {
        const double z = 2 + 4 * u(rng);
        const double px = -0.1 * cam.width + 1.2 * cam.width * u(rng);
        const double py = -0.1 * cam.height + 1.2 * cam.height * u(rng);
        cloud.means.row(i) << (px - cam.cx) * z / cam.fx, (py - cam.cy) * z / cam.fy, z;
        for (int a = 0; a < 3; ++a) cloud.log_scales(i, a) = std::log(scale_lo + (scale_hi - scale_lo) * u(rng));
        Eigen::Vector4d q(g(rng), g(rng), g(rng), g(rng));
        cloud.rotations.row(i) = q.normalized().transpose();
        cloud.opacity_logits[i] = logit(0.05 + 0.9 * u(rng));
        for (int c = 0; c < 3; ++c) {
            cloud.sh(i, c * 16) = (u(rng) - 0.5) / 0.2820947917738781;
            for (int k = 1; k < 16; ++k) cloud.sh(i, c * 16 + k) = 0.1 * g(rng);
        }
    }
    return cloud;
}

} // namespace rsosplat::testing
