#include "rsosplat/camera.hpp"

#include "rsosplat/error.hpp"

#include <cmath>
#include <string>

namespace rsosplat {

PinholeCamera PinholeCamera::scaled_to(int new_width, int new_height) const {
    PinholeCamera out = *this;
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    out.width = new_width;
    out.height = new_height;
    out.fx = fx * sx;
    out.cx = cx * sx;
    out.fy = fy * sy;
    out.cy = cy * sy;
    return out;
}

void PinholeCamera::validate() const {
    auto fail = [&](const std::string& what) {
        throw Error("InvalidCamera", "camera " + std::to_string(camera_id) + ": " + what);
    };
    if (width <= 0 || height <= 0) fail("non-positive image size");
    if (!(fx > 0) || !(fy > 0)) fail("non-positive focal length");
    if (cx < 0 || cx > width || cy < 0 || cy > height) fail("principal point outside image");
    if (std::abs(rotation.norm() - 1.0) > 1e-9) fail("rotation quaternion is not unit");
    if (!translation.allFinite()) fail("non-finite translation");
}

void look_at(PinholeCamera& camera, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
             const Eigen::Vector3d& up) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    const Eigen::Quaterniond q(r);
    camera.rotation = Eigen::Vector4d(q.w(), q.x(), q.y(), q.z()).normalized();
    if (camera.rotation[0] < 0) camera.rotation = -camera.rotation;
    camera.translation = -camera.rotation_matrix() * eye;
}

} // namespace rsosplat
