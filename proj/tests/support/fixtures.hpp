#pragma once

#include "rsosplat/colmap.hpp"

#include <cmath>
#include <random>
#include <string>

namespace rsosplat::testing {

/// Reconstruction with random intrinsics, poses and points; colors are whole
/// bytes so they survive the COLMAP encodings unchanged.
inline SfmBundle random_bundle(std::uint64_t seed, int cameras, int views, int points) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> byte(0, 255);
    SfmBundle b;
    for (int c = 1; c <= cameras; ++c) {
        PinholeCamera cam;
        cam.camera_id = static_cast<std::uint32_t>(c);
        cam.width = 320 + 16 * c;
        cam.height = 240 + 8 * c;
        cam.fx = 300 + 50 * std::abs(u(rng));
        cam.fy = c % 2 ? cam.fx : cam.fx * 1.01;
        cam.cx = cam.width * (0.5 + 0.1 * u(rng));
        cam.cy = cam.height * (0.5 + 0.1 * u(rng));
        b.cameras[cam.camera_id] = cam;
    }
    for (int v = 0; v < views; ++v) {
        PosedView view;
        view.image_id = static_cast<std::uint32_t>(v + 10);
        view.name = "img_" + std::to_string(v) + ".png";
        view.camera_id = static_cast<std::uint32_t>(1 + v % cameras);
        view.rotation = Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng)).normalized();
        view.translation = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 3;
        b.views.push_back(view);
    }
    for (int p = 0; p < points; ++p) {
        SparsePoint pt;
        pt.point_id = static_cast<std::uint64_t>(p + 1);
        pt.position = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 10;
        pt.color = Eigen::Vector3d(byte(rng), byte(rng), byte(rng)) / 255.0;
        pt.error = std::abs(u(rng));
        pt.track_length = static_cast<std::uint64_t>(2 + p % 5);
        b.points.push_back(pt);
    }
    return b;
}

} // namespace rsosplat::testing
