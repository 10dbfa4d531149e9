#include "rsosplat/synth.hpp"

#include "rsosplat/error.hpp"
#include "rsosplat/parallel.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace rsosplat {

namespace fs = std::filesystem;

void PrimitiveScene::validate() const {
    auto in_unit = [](const Eigen::Vector3d& v) { return v.minCoeff() >= 0 && v.maxCoeff() <= 1; };
    for (const auto& s : spheres)
        if (!(s.radius > 0) || !in_unit(s.albedo)) throw Error("InvalidScene", "sphere needs radius > 0 and albedo in [0, 1]");
    for (const auto& b : boxes)
        if (!(b.min.array() < b.max.array()).all() || !in_unit(b.albedo))
            throw Error("InvalidScene", "box needs min < max and albedo in [0, 1]");
    if (std::abs(light_direction.norm() - 1.0) > 1e-9) throw Error("InvalidScene", "light direction must be unit");
    if (light_intensity < 0 || light_intensity > 1 || ambient < 0 || ambient > 1 || !in_unit(background))
        throw Error("InvalidScene", "intensity, ambient and background must lie in [0, 1]");
}

double PrimitiveScene::extent() const {
    if (spheres.empty() && boxes.empty()) return 0;
    Eigen::AlignedBox3d bounds;
    for (const auto& s : spheres) {
        bounds.extend(s.center - Eigen::Vector3d::Constant(s.radius));
        bounds.extend(s.center + Eigen::Vector3d::Constant(s.radius));
    }
    for (const auto& b : boxes) {
        bounds.extend(b.min);
        bounds.extend(b.max);
    }
    return 0.5 * bounds.diagonal().norm();
}

PrimitiveScene mockup_scene() {
    PrimitiveScene scene;
    const Eigen::Vector3d gold(0.85, 0.65, 0.25);
    const Eigen::Vector3d panel_blue(0.15, 0.25, 0.65);
    scene.boxes.push_back({{-0.2, -0.2, -0.3}, {0.2, 0.2, 0.3}, gold});
    scene.boxes.push_back({{0.2, -0.15, -0.01}, {0.8, 0.15, 0.01}, panel_blue});
    scene.boxes.push_back({{-0.8, -0.15, -0.01}, {-0.2, 0.15, 0.01}, panel_blue});
    scene.spheres.push_back({{0.0, 0.0, 0.42}, 0.12, {0.85, 0.85, 0.85}});
    scene.light_direction = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
    return scene;
}

Intrinsics Intrinsics::from_fov(int width, int height, double horizontal_fov_deg) {
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = 0.5 * width / std::tan(0.5 * horizontal_fov_deg * std::numbers::pi / 180.0);
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
}

PinholeCamera ring_camera(int k, int n, double radius, double height, const Eigen::Vector3d& target,
                          const Intrinsics& intrinsics) {
    if (n < 1) throw Error("TooFewViews", "a camera ring needs at least one view");
    const int wrapped = ((k % n) + n) % n;
    const double angle = 2.0 * std::numbers::pi * wrapped / n;
    PinholeCamera cam;
    cam.width = intrinsics.width;
    cam.height = intrinsics.height;
    cam.fx = intrinsics.fx;
    cam.fy = intrinsics.fy;
    cam.cx = intrinsics.cx;
    cam.cy = intrinsics.cy;
    const Eigen::Vector3d eye = target + Eigen::Vector3d(radius * std::cos(angle), radius * std::sin(angle), height);
    look_at(cam, eye, target, Eigen::Vector3d::UnitZ());
    return cam;
}

std::vector<PinholeCamera> ring_cameras(int n, double radius, double height, const Eigen::Vector3d& target,
                                        const Intrinsics& intrinsics) {
    if (n < 2) throw Error("TooFewViews", "a camera ring needs at least 2 views");
    std::vector<PinholeCamera> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) out.push_back(ring_camera(k, n, radius, height, target, intrinsics));
    return out;
}

std::optional<double> intersect(const Sphere& sphere, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
    const Eigen::Vector3d oc = origin - sphere.center;
    const double a = dir.squaredNorm();
    const double half_b = oc.dot(dir);
    const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
    const double disc = half_b * half_b - a * c;
    if (disc < 0 || a == 0) return std::nullopt;
    // Cancellation-free roots: q = -(b/2 + sign(b/2) sqrt(disc)), roots q/a and c/q.
    const double q = -(half_b + std::copysign(std::sqrt(disc), half_b));
    double t0 = q / a;
    double t1 = q != 0 ? c / q : t0;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > 0) return t0;
    if (t1 > 0) return t1;
    return std::nullopt;
}

namespace {

struct BoxHit {
    double t;
    int axis;
    double sign;
};

std::optional<BoxHit> intersect_box(const Box& box, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int near_axis = 0, far_axis = 0;
    for (int a = 0; a < 3; ++a) {
        if (dir[a] == 0) {
            if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
            continue;
        }
        double t0 = (box.min[a] - origin[a]) / dir[a];
        double t1 = (box.max[a] - origin[a]) / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_near) {
            t_near = t0;
            near_axis = a;
        }
        if (t1 < t_far) {
            t_far = t1;
            far_axis = a;
        }
    }
    if (t_near > t_far || t_far <= 0) return std::nullopt;
    if (t_near > 0) return BoxHit{t_near, near_axis, dir[near_axis] > 0 ? -1.0 : 1.0};
    return BoxHit{t_far, far_axis, dir[far_axis] > 0 ? 1.0 : -1.0};
}

} // namespace

std::optional<double> intersect(const Box& box, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
    if (const auto hit = intersect_box(box, origin, dir)) return hit->t;
    return std::nullopt;
}

std::optional<RayHit> trace(const PrimitiveScene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
    std::optional<RayHit> best;
    for (const auto& s : scene.spheres) {
        const auto t = intersect(s, origin, dir);
        if (!t || (best && *t >= best->t)) continue;
        RayHit hit;
        hit.t = *t;
        hit.point = origin + *t * dir;
        hit.normal = (hit.point - s.center).normalized();
        hit.albedo = s.albedo;
        best = hit;
    }
    for (const auto& b : scene.boxes) {
        const auto h = intersect_box(b, origin, dir);
        if (!h || (best && h->t >= best->t)) continue;
        RayHit hit;
        hit.t = h->t;
        hit.point = origin + h->t * dir;
        hit.normal = Eigen::Vector3d::Zero();
        hit.normal[h->axis] = h->sign;
        hit.albedo = b.albedo;
        best = hit;
    }
    return best;
}

namespace {

Eigen::Vector3d shade(const PrimitiveScene& scene, const RayHit& hit) {
    const double diffuse = std::max(0.0, hit.normal.dot(scene.light_direction));
    return (hit.albedo * (scene.ambient + diffuse * scene.light_intensity)).cwiseMin(1.0);
}

Eigen::Vector3d pixel_ray(const PinholeCamera& cam, const Eigen::Matrix3d& r, double u, double v) {
    const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    return (r.transpose() * d_cam).normalized();
}

} // namespace

ImageRGB raytrace(const PrimitiveScene& scene, const PinholeCamera& camera) {
    ImageRGB img(camera.width, camera.height);
    const Eigen::Matrix3d r = camera.rotation_matrix();
    const Eigen::Vector3d origin = camera.center();
    parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < camera.width; ++x) {
            const Eigen::Vector3d dir = pixel_ray(camera, r, x + 0.5, y + 0.5);
            const auto hit = trace(scene, origin, dir);
            img.rgb(x, y) = hit ? shade(scene, *hit) : scene.background;
        }
    });
    return img;
}

namespace {

struct SurfaceSample {
    Eigen::Vector3d point;
    Eigen::Vector3d normal;
    Eigen::Vector3d albedo;
};

/// Jittered grid of roughly `count` cells over [0,1]^2 with the given aspect.
template <typename Emit>
void jittered_grid(int count, double aspect, std::mt19937_64& rng, Emit&& emit) {
    if (count <= 0) return;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int gu = std::max(1, static_cast<int>(std::lround(std::sqrt(count * aspect))));
    const int gv = std::max(1, static_cast<int>(std::lround(static_cast<double>(count) / gu)));
    for (int j = 0; j < gv; ++j)
        for (int i = 0; i < gu; ++i) {
            const double u = (i + unit(rng)) / gu;
            const double v = (j + unit(rng)) / gv;
            emit(u, v);
        }
}

std::vector<SurfaceSample> sample_surfaces(const PrimitiveScene& scene, int total, std::mt19937_64& rng) {
    double area = 0;
    for (const auto& s : scene.spheres) area += 4 * std::numbers::pi * s.radius * s.radius;
    for (const auto& b : scene.boxes) {
        const Eigen::Vector3d e = b.max - b.min;
        area += 2 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
    }
    std::vector<SurfaceSample> out;
    if (area <= 0) return out;
    const double density = total / area;

    for (const auto& s : scene.spheres) {
        // Uniform in (z, phi) is uniform in area on a sphere.
        const int count = static_cast<int>(std::lround(density * 4 * std::numbers::pi * s.radius * s.radius));
        jittered_grid(count, std::numbers::pi, rng, [&](double u, double v) {
            const double phi = 2 * std::numbers::pi * u;
            const double z = 1 - 2 * v;
            const double rho = std::sqrt(std::max(0.0, 1 - z * z));
            const Eigen::Vector3d n(rho * std::cos(phi), rho * std::sin(phi), z);
            out.push_back({s.center + s.radius * n, n, s.albedo});
        });
    }
    for (const auto& b : scene.boxes) {
        const Eigen::Vector3d e = b.max - b.min;
        for (int axis = 0; axis < 3; ++axis) {
            const int a1 = (axis + 1) % 3;
            const int a2 = (axis + 2) % 3;
            for (const double sign : {-1.0, 1.0}) {
                const int count = static_cast<int>(std::lround(density * e[a1] * e[a2]));
                jittered_grid(count, e[a1] / e[a2], rng, [&](double u, double v) {
                    Eigen::Vector3d p;
                    p[axis] = sign < 0 ? b.min[axis] : b.max[axis];
                    p[a1] = b.min[a1] + u * e[a1];
                    p[a2] = b.min[a2] + v * e[a2];
                    Eigen::Vector3d n = Eigen::Vector3d::Zero();
                    n[axis] = sign;
                    out.push_back({p, n, b.albedo});
                });
            }
        }
    }
    return out;
}

/// Cameras from which the sample is unoccluded, in front and inside the image.
std::uint64_t count_observers(const PrimitiveScene& scene, const SurfaceSample& s,
                              const std::vector<PinholeCamera>& cams) {
    std::uint64_t seen = 0;
    for (const auto& cam : cams) {
        const Eigen::Vector3d c = cam.center();
        const Eigen::Vector3d to_cam = c - s.point;
        if (s.normal.dot(to_cam) <= 0) continue;
        const Eigen::Vector3d x_cam = cam.rotation_matrix() * s.point + cam.translation;
        if (x_cam.z() <= 0) continue;
        const Eigen::Vector2d px = cam.project(s.point);
        if (px.x() < 0 || px.y() < 0 || px.x() >= cam.width || px.y() >= cam.height) continue;
        const double dist = to_cam.norm();
        const auto hit = trace(scene, c, -to_cam / dist);
        if (hit && std::abs(hit->t - dist) <= 1e-6 * std::max(1.0, dist)) ++seen;
    }
    return seen;
}

} // namespace

SfmBundle make_dataset(const PrimitiveScene& scene, const SynthOptions& options) {
    scene.validate();
    const Intrinsics k = Intrinsics::from_fov(options.width, options.height, options.fov_deg);
    const auto cams = ring_cameras(options.views, options.ring_radius, options.ring_height, options.target, k);

    SfmBundle bundle;
    PinholeCamera intrinsics = cams.front();
    intrinsics.camera_id = 1;
    intrinsics.rotation = Eigen::Vector4d(1, 0, 0, 0);
    intrinsics.translation.setZero();
    bundle.cameras[1] = intrinsics;

    bundle.views.resize(cams.size());
    parallel_for(cams.size(), [&](std::size_t i) {
        PosedView& view = bundle.views[i];
        view.image_id = static_cast<std::uint32_t>(i + 1);
        char name[32];
        std::snprintf(name, sizeof name, "view_%03zu.png", i);
        view.name = name;
        view.camera_id = 1;
        view.rotation = cams[i].rotation;
        view.translation = cams[i].translation;
        view.image = raytrace(scene, cams[i]);
    });

    std::mt19937_64 rng(options.seed);
    const auto samples = sample_surfaces(scene, options.points, rng);
    std::vector<std::uint64_t> observers(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) { observers[i] = count_observers(scene, samples[i], cams); });

    const double sigma = options.noise_fraction * scene.extent();
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (observers[i] == 0) continue;
        SparsePoint p;
        p.point_id = bundle.points.size() + 1;
        p.position = samples[i].point;
        if (sigma > 0) p.position += sigma * Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
        p.color = (samples[i].albedo * 255.0).array().round() / 255.0;  // stored as bytes
        p.track_length = observers[i];
        bundle.points.push_back(p);
    }
    return bundle;
}

Manifest write_dataset(const fs::path& dir, const SfmBundle& bundle, std::size_t holdout_every,
                       const nlohmann::json& extra) {
    const Split split = split_train_test(bundle.views.size(), holdout_every);
    fs::create_directories(dir / "images");
    write_sparse_model(dir / "sparse", bundle, ColmapFormat::text);
    parallel_for(bundle.views.size(), [&](std::size_t i) {
        const auto& view = bundle.views[i];
        if (!view.image) throw Error("MissingImage", "view '" + view.name + "' has no image to write");
        write_png(dir / "images" / view.name, *view.image);
    });

    Manifest manifest;
    for (const auto& view : bundle.views) manifest.views.push_back(view.name);
    manifest.splits.assign(bundle.views.size(), "train");
    for (std::size_t i : split.test) manifest.splits[i] = "test";
    manifest.preprocessing["holdout_every"] = holdout_every;
    manifest.preprocessing["chroma_key"] = nullptr;
    manifest.preprocessing["resize"] = nullptr;
    manifest.extra = extra;
    manifest.extra["generator"] = "synth";
    write_manifest(dir / "manifest.json", manifest);
    return manifest;
}

} // namespace rsosplat
