#pragma once

#include "rsosplat/camera.hpp"
#include "rsosplat/gaussian.hpp"
#include "rsosplat/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rsosplat {

/// Rasterizer constants. Defaults are the usual splatting values.
struct RasterConfig {
    int tile_size = 16;
    double alpha_cap = 0.99;          // per-splat alpha is capped here
    double alpha_min = 1.0 / 255.0;   // weaker contributions are skipped
    double transmittance_min = 1e-4;  // a pixel stops once T drops below
    double dilation = 0.3;            // added to the 2D covariance diagonal (px^2)
    double radius_sigmas = 3.0;       // splat support radius in major-axis sigmas
    double near_plane = 0.01;
    double frustum_slack = 1.3;       // Jacobian clamp, as a multiple of the view width
};

/// Screen-space footprint of one visible Gaussian.
struct SplatProjection {
    std::int32_t index = 0;          // row in the GaussianCloud
    Eigen::Vector2d mean;            // pixels
    Eigen::Matrix2d cov;             // dilated 2D covariance
    Eigen::Vector3d conic;           // inverse covariance (a, b, c) = [[a b][b c]]
    double depth = 0;                // view-space z
    double radius = 0;               // pixels
    Eigen::Vector3d color;           // clamped SH color for this view
    double opacity = 0;              // sigmoid(logit)
};

/// Per-tile splat lists, each ordered front to back.
struct TileBins {
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::uint32_t> offsets;  // tiles_x * tiles_y + 1 prefix offsets
    std::vector<std::uint32_t> entries;  // indices into the projection list

    std::span<const std::uint32_t> tile(int tx, int ty) const {
        const auto t = static_cast<std::size_t>(ty) * tiles_x + tx;
        return {entries.data() + offsets[t], entries.data() + offsets[t + 1]};
    }
    int tile_count() const { return tiles_x * tiles_y; }
};

struct RenderedView {
    ImageRGB image;
    std::vector<double> alpha;  // accumulated opacity per pixel
};

/// Projects every Gaussian; culled ones (behind the near plane or with a
/// footprint entirely off screen) are absent from the result, which keeps
/// cloud order.
std::vector<SplatProjection> project(const GaussianCloud& cloud, const PinholeCamera& camera,
                                     const RasterConfig& config = {});

/// Integer tile rectangle [x0, x1] x [y0, y1] touched by a splat's bounding
/// square; empty when x0 > x1 or y0 > y1.
struct TileRect {
    int x0, y0, x1, y1;
    bool empty() const { return x0 > x1 || y0 > y1; }
};
TileRect tile_rect(const SplatProjection& splat, int tiles_x, int tiles_y, int tile_size);

/// Assigns splats to every tile their bounding square overlaps. Lists are
/// sorted by depth with ties broken by Gaussian index.
TileBins bin_and_sort(std::span<const SplatProjection> projections, int width, int height,
                      const RasterConfig& config = {});

/// Front-to-back alpha compositing per pixel over the tile's list.
RenderedView blend_forward(const TileBins& bins, std::span<const SplatProjection> projections,
                           const Eigen::Vector3d& background, int width, int height,
                           const RasterConfig& config = {});

/// Everything the backward pass needs from a forward render.
struct RenderState {
    PinholeCamera camera;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    RasterConfig config;
    std::vector<SplatProjection> projections;
    TileBins bins;
    RenderedView view;
};

RenderState render_with_state(const GaussianCloud& cloud, const PinholeCamera& camera,
                              const Eigen::Vector3d& background, const RasterConfig& config = {});

RenderedView render(const GaussianCloud& cloud, const PinholeCamera& camera,
                    const Eigen::Vector3d& background, const RasterConfig& config = {});

/// Parameter gradients, shaped like the cloud.
struct CloudGradients {
    RowMatrix<double, 3> means;
    RowMatrix<double, 3> log_scales;
    RowMatrix<double, 4> rotations;
    RowMatrix<double, 1> opacity_logits;
    RowMatrix<double, 3 * kShCoeffsPerChannel> sh;
    /// |dL/d(screen mean)| in normalized device units, per Gaussian.
    RowMatrix<double, 1> screen_grad_norm;
    /// Gaussians that survived culling in this view.
    std::vector<bool> visible;

    static CloudGradients zeros(Eigen::Index n);
    CloudGradients& operator+=(const CloudGradients& other);
    bool all_finite() const;
};

/// Analytic gradients of a scalar loss through compositing, the 2D Gaussian
/// falloff, covariance projection, the perspective mean, sigmoid opacity,
/// exp scales, quaternion normalization and SH evaluation. `d_image` holds
/// dL/d(rendered RGB); `d_alpha`, when non-empty, dL/d(accumulated alpha).
/// Throws NonFiniteGradient if any gradient is NaN or infinite.
CloudGradients blend_backward(const GaussianCloud& cloud, const RenderState& state, const ImageRGB& d_image,
                              std::span<const double> d_alpha = {});

/// Raw float64 little-endian dump: int32 width, int32 height, then R, G, B
/// and alpha planes, each row-major.
void write_raw_render(const std::filesystem::path& path, const RenderedView& view);
RenderedView read_raw_render(const std::filesystem::path& path);

} // namespace rsosplat
