#pragma once

#include "rsosplat/camera.hpp"
#include "rsosplat/colmap.hpp"
#include "rsosplat/image.hpp"
#include "rsosplat/preprocess.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace rsosplat {

struct Sphere {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 1;
    Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.5);
};

struct Box {
    Eigen::Vector3d min = -Eigen::Vector3d::Ones();
    Eigen::Vector3d max = Eigen::Vector3d::Ones();
    Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.5);
};

/// Analytic scene lit by one directional light plus ambient.
/// `light_direction` points from the surface toward the light.
struct PrimitiveScene {
    std::vector<Sphere> spheres;
    std::vector<Box> boxes;
    Eigen::Vector3d light_direction = Eigen::Vector3d::UnitZ();
    double light_intensity = 0.75;
    double ambient = 0.25;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();

    /// Throws InvalidScene when an invariant is violated.
    void validate() const;
    /// Half-diagonal of the primitives' bounding box (0 for an empty scene).
    double extent() const;
};

/// Satellite-like mock-up: a 0.4 x 0.4 x 0.6 body, two 0.6 x 0.3 x 0.02
/// panels on its sides and a 0.12 radius antenna sphere on top.
PrimitiveScene mockup_scene();

struct Intrinsics {
    int width = 256;
    int height = 192;
    double fx = 0, fy = 0, cx = 0, cy = 0;

    /// Square pixels, principal point at the image center.
    static Intrinsics from_fov(int width, int height, double horizontal_fov_deg);
};

/// Camera k of an n-camera ring; k is taken modulo n so a full turn lands on
/// exactly the same pose as camera 0.
PinholeCamera ring_camera(int k, int n, double radius, double height, const Eigen::Vector3d& target,
                          const Intrinsics& intrinsics);

/// n cameras evenly spaced on a horizontal circle (world up is +z) around
/// target, each looking at it. Camera k sits at angle 360 k / n degrees.
/// Throws TooFewViews when n < 2.
std::vector<PinholeCamera> ring_cameras(int n, double radius, double height, const Eigen::Vector3d& target,
                                        const Intrinsics& intrinsics);

struct RayHit {
    double t = 0;
    Eigen::Vector3d point;
    Eigen::Vector3d normal;  // unit, facing outward
    Eigen::Vector3d albedo;
};

/// Smallest positive ray parameter at which the ray meets the primitive.
std::optional<double> intersect(const Sphere& sphere, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);
std::optional<double> intersect(const Box& box, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

/// Nearest hit over the whole scene.
std::optional<RayHit> trace(const PrimitiveScene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

/// Lambertian shading: albedo * (ambient + max(0, n.l) * intensity), no
/// shadows; background where nothing is hit. One ray through each pixel
/// center.
ImageRGB raytrace(const PrimitiveScene& scene, const PinholeCamera& camera);

struct SynthOptions {
    int views = 36;
    double ring_radius = 2.5;
    double ring_height = 0.5;
    Eigen::Vector3d target = Eigen::Vector3d::Zero();
    int width = 256;
    int height = 192;
    double fov_deg = 50;
    int points = 4000;            // surface samples drawn before visibility culling
    double noise_fraction = 0.01; // position noise sigma, as a fraction of the scene extent
    std::uint64_t seed = 0;
};

/// Ring-rig dataset with ray-traced images attached to the views and a
/// fabricated sparse cloud: area-stratified surface samples seen by at least
/// one camera, colored by albedo rounded to whole bytes, with Gaussian
/// position noise.
SfmBundle make_dataset(const PrimitiveScene& scene, const SynthOptions& options);

/// Writes sparse/ (COLMAP text), images/*.png and manifest.json holding out
/// every k-th view.
Manifest write_dataset(const std::filesystem::path& dir, const SfmBundle& bundle, std::size_t holdout_every = 8,
                       const nlohmann::json& extra = nlohmann::json::object());

} // namespace rsosplat
