#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>

namespace rsosplat {

/// Scalar-first (w, x, y, z) quaternion to rotation matrix. The quaternion is
/// used as given; callers normalize first when needed.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> quaternion_to_matrix(const Eigen::Matrix<Scalar, 4, 1>& q) {
    const Scalar r = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix<Scalar, 3, 3> m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - r * z), 2 * (x * z + r * y),
         2 * (x * y + r * z), 1 - 2 * (x * x + z * z), 2 * (y * z - r * x),
         2 * (x * z - r * y), 2 * (y * z + r * x), 1 - 2 * (x * x + y * y);
    return m;
}

/// Pinhole intrinsics plus a world-to-camera pose: x_cam = R * x_world + t.
/// Camera looks down +z, image x right, image y down; pixel (i, j) covers
/// [i, i+1) x [j, j+1).
struct PinholeCamera {
    std::uint32_t camera_id = 1;
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Eigen::Vector4d rotation{1, 0, 0, 0};  // (w, x, y, z), world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Matrix3d rotation_matrix() const { return quaternion_to_matrix<double>(rotation); }
    Eigen::Vector3d center() const { return -rotation_matrix().transpose() * translation; }

    /// Pixel coordinates of a world point (no visibility checks).
    Eigen::Vector2d project(const Eigen::Vector3d& world) const {
        const Eigen::Vector3d t = rotation_matrix() * world + translation;
        return {fx * t.x() / t.z() + cx, fy * t.y() / t.z() + cy};
    }

    /// Same pose, intrinsics rescaled to a new image size.
    PinholeCamera scaled_to(int new_width, int new_height) const;

    /// Throws InvalidCamera when an invariant is violated.
    void validate() const;

    friend bool operator==(const PinholeCamera& a, const PinholeCamera& b) {
        return a.camera_id == b.camera_id && a.width == b.width && a.height == b.height &&
               a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy &&
               a.rotation == b.rotation && a.translation == b.translation;
    }
};

/// World-to-camera pose that places the camera at eye looking at target,
/// with up projecting to the image's negative y direction.
void look_at(PinholeCamera& camera, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
             const Eigen::Vector3d& up);

} // namespace rsosplat
