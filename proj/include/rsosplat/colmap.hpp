#pragma once

#include "rsosplat/camera.hpp"
#include "rsosplat/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rsosplat {

enum class ColmapFormat { text, binary };

/// One registered image: name, intrinsics reference and world-to-camera pose.
struct PosedView {
    std::uint32_t image_id = 0;
    std::string name;
    std::uint32_t camera_id = 0;
    Eigen::Vector4d rotation{1, 0, 0, 0};  // (w, x, y, z), unit
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    std::optional<ImageRGB> image;

    /// Equality covers the reconstruction fields only, not pixel data.
    friend bool operator==(const PosedView& a, const PosedView& b) {
        return a.image_id == b.image_id && a.name == b.name && a.camera_id == b.camera_id &&
               a.rotation == b.rotation && a.translation == b.translation;
    }
};

struct SparsePoint {
    std::uint64_t point_id = 0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Vector3d color = Eigen::Vector3d::Zero();  // bytes / 255
    double error = 0.0;
    std::uint64_t track_length = 0;

    friend bool operator==(const SparsePoint&, const SparsePoint&) = default;
};

using CameraMap = std::map<std::uint32_t, PinholeCamera>;

/// Parsed sparse reconstruction. Cameras in the map carry intrinsics only
/// (identity pose); camera_for() composes a view's full camera.
struct SfmBundle {
    CameraMap cameras;
    std::vector<PosedView> views;
    std::vector<SparsePoint> points;

    PinholeCamera camera_for(const PosedView& view) const;
    /// Every view's camera_id resolves; throws UnknownCameraId otherwise.
    void validate() const;

    friend bool operator==(const SfmBundle&, const SfmBundle&) = default;
};

CameraMap parse_cameras(const std::filesystem::path& path, ColmapFormat format);
std::vector<PosedView> parse_views(const std::filesystem::path& path, ColmapFormat format);
std::vector<SparsePoint> parse_points(const std::filesystem::path& path, ColmapFormat format);

void write_cameras(const std::filesystem::path& path, const CameraMap& cameras, ColmapFormat format);
void write_views(const std::filesystem::path& path, const std::vector<PosedView>& views,
                 ColmapFormat format);
void write_points(const std::filesystem::path& path, const std::vector<SparsePoint>& points,
                  ColmapFormat format);

/// Loads cameras/images/points3D from a sparse model directory, preferring
/// .bin files when both exist. Throws MissingCamerasFile, MissingImagesFile
/// or MissingPointsFile.
SfmBundle load_sparse_model(const std::filesystem::path& dir);
void write_sparse_model(const std::filesystem::path& dir, const SfmBundle& bundle,
                        ColmapFormat format);

/// Locates the sparse model under a dataset root: root, root/sparse or
/// root/sparse/0, whichever holds a cameras file.
std::filesystem::path find_sparse_model(const std::filesystem::path& root);

} // namespace rsosplat
