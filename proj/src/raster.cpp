#include "rsosplat/raster.hpp"

#include "rsosplat/error.hpp"
#include "rsosplat/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace rsosplat {

namespace {

/// Camera quantities shared by every Gaussian of one view.
struct ViewFrame {
    Eigen::Matrix3d rotation;
    Eigen::Vector3d translation;
    Eigen::Vector3d center;
    double fx, fy, cx, cy;
    double u_lo, u_hi, v_lo, v_hi;  // Jacobian clamp on tx/tz and ty/tz
    int width, height;

    ViewFrame(const PinholeCamera& cam, const RasterConfig& cfg)
        : rotation(cam.rotation_matrix()), translation(cam.translation), center(cam.center()),
          fx(cam.fx), fy(cam.fy), cx(cam.cx), cy(cam.cy), width(cam.width), height(cam.height) {
        const double mx = 0.5 * (cfg.frustum_slack - 1.0) * cam.width;
        const double my = 0.5 * (cfg.frustum_slack - 1.0) * cam.height;
        u_lo = (-mx - cx) / fx;
        u_hi = (cam.width + mx - cx) / fx;
        v_lo = (-my - cy) / fy;
        v_hi = (cam.height + my - cy) / fy;
    }
};

/// Intermediate values of the per-Gaussian projection, kept so the backward
/// pass can reuse the forward algebra exactly.
struct GaussianTerms {
    Eigen::Vector3d view;          // t = W p + trans
    Eigen::Vector4d q_unit;
    double q_norm;
    Eigen::Matrix3d rot;           // R(q_unit)
    Eigen::Vector3d scale;         // exp(log_scale)
    Eigen::Matrix3d cov3;          // R S S R^T
    double u, v, uc, vc;           // tx/tz, ty/tz and their clamped values
    Eigen::Matrix<double, 2, 3> jac;
    Eigen::Matrix<double, 2, 3> tw;  // J W
    Eigen::Matrix2d cov2;            // dilated
    Eigen::Vector2d mean2;
    Eigen::Vector3d dir;             // unit (p - camera center)
    double dir_len;
    ShBasisVector<double> basis;
    Eigen::Vector3d raw_color;       // before clamping
};

bool compute_terms(const GaussianCloud& cloud, Eigen::Index i, const ViewFrame& f, const RasterConfig& cfg,
                   GaussianTerms& g) {
    const Eigen::Vector3d p = cloud.means.row(i).transpose();
    g.view = f.rotation * p + f.translation;
    if (!(g.view.z() > cfg.near_plane)) return false;

    const Eigen::Vector4d q = cloud.rotations.row(i).transpose();
    g.q_norm = q.norm();
    g.q_unit = q / g.q_norm;
    g.rot = quaternion_to_matrix<double>(g.q_unit);
    g.scale = cloud.log_scales.row(i).transpose().array().exp();
    const Eigen::Matrix3d m = g.rot * g.scale.asDiagonal();
    g.cov3 = m * m.transpose();

    const double tz = g.view.z();
    g.u = g.view.x() / tz;
    g.v = g.view.y() / tz;
    g.uc = std::clamp(g.u, f.u_lo, f.u_hi);
    g.vc = std::clamp(g.v, f.v_lo, f.v_hi);
    g.jac << f.fx / tz, 0.0, -f.fx * g.uc / tz,
             0.0, f.fy / tz, -f.fy * g.vc / tz;
    g.tw = g.jac * f.rotation;
    g.cov2 = g.tw * g.cov3 * g.tw.transpose();
    g.cov2(0, 0) += cfg.dilation;
    g.cov2(1, 1) += cfg.dilation;
    g.mean2 = {f.fx * g.u + f.cx, f.fy * g.v + f.cy};

    const Eigen::Vector3d offset = p - f.center;
    g.dir_len = offset.norm();
    g.dir = g.dir_len > 0 ? Eigen::Vector3d(offset / g.dir_len) : Eigen::Vector3d(0, 0, 1);
    g.basis = sh_basis<double>(cloud.sh_degree, g.dir);
    g.raw_color = sh_radiance(cloud.sh.row(i).transpose(), g.basis);
    return true;
}

double major_sigma(const Eigen::Matrix2d& cov) {
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double det = cov.determinant();
    return std::sqrt(mid + std::sqrt(std::max(mid * mid - det, 0.0)));
}

// dR/dq for R(q), q = (w, x, y, z).
std::array<Eigen::Matrix3d, 4> rotation_partials(const Eigen::Vector4d& q) {
    const double r = q[0], x = q[1], y = q[2], z = q[3];
    std::array<Eigen::Matrix3d, 4> d;
    d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    d[1] << 0, y, z, y, -2 * x, -r, z, r, -2 * x;
    d[2] << -2 * y, x, r, x, 0, z, -r, z, -2 * y;
    d[3] << -2 * z, -r, x, r, -2 * z, y, x, y, 0;
    for (auto& m : d) m *= 2.0;
    return d;
}

} // namespace

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

std::vector<SplatProjection> project(const GaussianCloud& cloud, const PinholeCamera& camera,
                                     const RasterConfig& config) {
    const ViewFrame frame(camera, config);
    const auto n = static_cast<std::size_t>(cloud.size());
    std::vector<SplatProjection> slots(n);
    std::vector<char> keep(n, 0);

    constexpr std::size_t kChunk = 1024;
    parallel_for((n + kChunk - 1) / kChunk, [&](std::size_t chunk) {
        GaussianTerms g;
        const std::size_t end = std::min(n, (chunk + 1) * kChunk);
        for (std::size_t i = chunk * kChunk; i < end; ++i) {
            if (!compute_terms(cloud, static_cast<Eigen::Index>(i), frame, config, g)) continue;
            SplatProjection& s = slots[i];
            s.index = static_cast<std::int32_t>(i);
            s.mean = g.mean2;
            s.cov = g.cov2;
            const double det = g.cov2.determinant();
            if (!(det > 0)) continue;
            s.conic = {g.cov2(1, 1) / det, -g.cov2(0, 1) / det, g.cov2(0, 0) / det};
            s.depth = g.view.z();
            s.radius = config.radius_sigmas * major_sigma(g.cov2);
            if (s.mean.x() + s.radius < 0 || s.mean.x() - s.radius > camera.width ||
                s.mean.y() + s.radius < 0 || s.mean.y() - s.radius > camera.height)
                continue;
            s.color = g.raw_color.cwiseMax(0.0).cwiseMin(1.0);
            s.opacity = cloud.opacity(static_cast<Eigen::Index>(i));
            keep[i] = 1;
        }
    });

    std::vector<SplatProjection> out;
    out.reserve(static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)));
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) out.push_back(slots[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Binning
// ---------------------------------------------------------------------------

TileRect tile_rect(const SplatProjection& s, int tiles_x, int tiles_y, int tile_size) {
    const double ts = tile_size;
    TileRect r;
    r.x0 = std::max(0, static_cast<int>(std::floor((s.mean.x() - s.radius) / ts)));
    r.y0 = std::max(0, static_cast<int>(std::floor((s.mean.y() - s.radius) / ts)));
    r.x1 = std::min(tiles_x - 1, static_cast<int>(std::floor((s.mean.x() + s.radius) / ts)));
    r.y1 = std::min(tiles_y - 1, static_cast<int>(std::floor((s.mean.y() + s.radius) / ts)));
    return r;
}

TileBins bin_and_sort(std::span<const SplatProjection> projections, int width, int height,
                      const RasterConfig& config) {
    TileBins bins;
    bins.tile_size = config.tile_size;
    bins.tiles_x = (width + config.tile_size - 1) / config.tile_size;
    bins.tiles_y = (height + config.tile_size - 1) / config.tile_size;
    const int tiles = bins.tile_count();

    std::vector<std::uint32_t> order(projections.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const auto& pa = projections[a];
        const auto& pb = projections[b];
        if (pa.depth != pb.depth) return pa.depth < pb.depth;
        return pa.index < pb.index;
    });

    std::vector<TileRect> rects(projections.size());
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(tiles) + 1, 0);
    for (std::size_t k = 0; k < projections.size(); ++k) {
        rects[k] = tile_rect(projections[k], bins.tiles_x, bins.tiles_y, bins.tile_size);
        const auto& r = rects[k];
        if (r.empty()) continue;
        for (int ty = r.y0; ty <= r.y1; ++ty)
            for (int tx = r.x0; tx <= r.x1; ++tx) ++counts[static_cast<std::size_t>(ty) * bins.tiles_x + tx + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    bins.offsets = counts;
    bins.entries.resize(counts.back());

    std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
    for (std::uint32_t k : order) {
        const auto& r = rects[k];
        if (r.empty()) continue;
        for (int ty = r.y0; ty <= r.y1; ++ty)
            for (int tx = r.x0; tx <= r.x1; ++tx)
                bins.entries[cursor[static_cast<std::size_t>(ty) * bins.tiles_x + tx]++] = k;
    }
    return bins;
}

// ---------------------------------------------------------------------------
// Forward compositing
// ---------------------------------------------------------------------------

namespace {

/// Compact copy of the fields compositing reads, gathered per tile.
struct TileSplat {
    double mx, my;
    double ca, cb, cc;   // conic
    double radius2;
    double opacity;
    double power_floor;  // below this the alpha is certainly under alpha_min
    double color[3];
};

void gather_tile(std::span<const std::uint32_t> list, std::span<const SplatProjection> projections,
                 const RasterConfig& cfg, std::vector<TileSplat>& out) {
    out.resize(list.size());
    for (std::size_t k = 0; k < list.size(); ++k) {
        const auto& s = projections[list[k]];
        TileSplat& t = out[k];
        t.mx = s.mean.x();
        t.my = s.mean.y();
        t.ca = s.conic[0];
        t.cb = s.conic[1];
        t.cc = s.conic[2];
        t.radius2 = s.radius * s.radius;
        t.opacity = s.opacity;
        // Conservative margin so the exact test below stays authoritative.
        t.power_floor = s.opacity > 0 ? std::log(cfg.alpha_min / s.opacity) - 1e-6
                                      : std::numeric_limits<double>::infinity();
        for (int c = 0; c < 3; ++c) t.color[c] = s.color[c];
    }
}

/// Alpha of splat s at pixel center (px, py), or 0 when outside its support
/// or below the skip threshold. Also reports the unscaled falloff.
inline double splat_alpha(const TileSplat& s, double px, double py, const RasterConfig& cfg, double& falloff,
                          double& dx, double& dy) {
    dx = px - s.mx;
    dy = py - s.my;
    if (dx * dx + dy * dy > s.radius2) return 0.0;
    const double power = -0.5 * (s.ca * dx * dx + s.cc * dy * dy) - s.cb * dx * dy;
    if (power < s.power_floor) return 0.0;
    falloff = std::exp(power);
    const double alpha = std::min(cfg.alpha_cap, s.opacity * falloff);
    return alpha < cfg.alpha_min ? 0.0 : alpha;
}

} // namespace

RenderedView blend_forward(const TileBins& bins, std::span<const SplatProjection> projections,
                           const Eigen::Vector3d& background, int width, int height, const RasterConfig& config) {
    RenderedView out;
    out.image = ImageRGB(width, height);
    out.alpha.assign(static_cast<std::size_t>(width) * height, 0.0);

    parallel_for(static_cast<std::size_t>(bins.tile_count()), [&](std::size_t t) {
        const int tx = static_cast<int>(t) % bins.tiles_x;
        const int ty = static_cast<int>(t) / bins.tiles_x;
        thread_local std::vector<TileSplat> list;
        gather_tile(bins.tile(tx, ty), projections, config, list);
        const int x_end = std::min(width, (tx + 1) * bins.tile_size);
        const int y_end = std::min(height, (ty + 1) * bins.tile_size);
        for (int y = ty * bins.tile_size; y < y_end; ++y) {
            for (int x = tx * bins.tile_size; x < x_end; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                double transmittance = 1.0;
                double r = 0, g = 0, b = 0;
                for (const TileSplat& s : list) {
                    double falloff, dx, dy;
                    const double alpha = splat_alpha(s, px, py, config, falloff, dx, dy);
                    if (alpha == 0.0) continue;
                    const double w = alpha * transmittance;
                    r += s.color[0] * w;
                    g += s.color[1] * w;
                    b += s.color[2] * w;
                    transmittance *= 1.0 - alpha;
                    if (transmittance < config.transmittance_min) break;
                }
                out.image.rgb(x, y) = Eigen::Vector3d(r, g, b) + transmittance * background;
                out.alpha[static_cast<std::size_t>(y) * width + x] = 1.0 - transmittance;
            }
        }
    });
    return out;
}

RenderState render_with_state(const GaussianCloud& cloud, const PinholeCamera& camera,
                              const Eigen::Vector3d& background, const RasterConfig& config) {
    RenderState state;
    state.camera = camera;
    state.background = background;
    state.config = config;
    state.projections = project(cloud, camera, config);
    state.bins = bin_and_sort(state.projections, camera.width, camera.height, config);
    state.view = blend_forward(state.bins, state.projections, background, camera.width, camera.height, config);
    return state;
}

RenderedView render(const GaussianCloud& cloud, const PinholeCamera& camera, const Eigen::Vector3d& background,
                    const RasterConfig& config) {
    return render_with_state(cloud, camera, background, config).view;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

CloudGradients CloudGradients::zeros(Eigen::Index n) {
    CloudGradients g;
    g.means = RowMatrix<double, 3>::Zero(n, 3);
    g.log_scales = RowMatrix<double, 3>::Zero(n, 3);
    g.rotations = RowMatrix<double, 4>::Zero(n, 4);
    g.opacity_logits = RowMatrix<double, 1>::Zero(n);
    g.sh = RowMatrix<double, 3 * kShCoeffsPerChannel>::Zero(n, 3 * kShCoeffsPerChannel);
    g.screen_grad_norm = RowMatrix<double, 1>::Zero(n);
    g.visible.assign(static_cast<std::size_t>(n), false);
    return g;
}

CloudGradients& CloudGradients::operator+=(const CloudGradients& o) {
    means += o.means;
    log_scales += o.log_scales;
    rotations += o.rotations;
    opacity_logits += o.opacity_logits;
    sh += o.sh;
    screen_grad_norm += o.screen_grad_norm;
    for (std::size_t i = 0; i < visible.size(); ++i) visible[i] = visible[i] || o.visible[i];
    return *this;
}

bool CloudGradients::all_finite() const {
    return means.allFinite() && log_scales.allFinite() && rotations.allFinite() && opacity_logits.allFinite() &&
           sh.allFinite() && screen_grad_norm.allFinite();
}

namespace {

/// dL/d(per-splat screen quantities), one slot per tile entry.
struct SplatGrad {
    double mean[2];
    double conic[3];
    double color[3];
    double opacity;
};

struct Contributor {
    std::uint32_t entry;
    double alpha;
    double falloff;
    double dx, dy;
    double transmittance;  // before this splat
    bool capped;
};

void check_finite(const CloudGradients& g) {
    if (g.all_finite()) return;
    std::ostringstream msg;
    msg << "non-finite gradient in";
    auto scan = [&](const auto& m, const char* name) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            if (!m.row(r).allFinite()) {
                msg << ' ' << name << "[gaussian " << r << ']';
                return;
            }
    };
    scan(g.means, "means");
    scan(g.log_scales, "log_scales");
    scan(g.rotations, "rotations");
    scan(g.opacity_logits, "opacity_logits");
    scan(g.sh, "sh");
    scan(g.screen_grad_norm, "screen_grad_norm");
    throw Error("NonFiniteGradient", msg.str());
}

} // namespace

CloudGradients blend_backward(const GaussianCloud& cloud, const RenderState& state, const ImageRGB& d_image,
                              std::span<const double> d_alpha) {
    const auto& cam = state.camera;
    const auto& cfg = state.config;
    const auto& bins = state.bins;
    const auto& projections = state.projections;
    if (d_image.width != cam.width || d_image.height != cam.height)
        throw Error("DimensionMismatch", "upstream gradient does not match the render size");
    const bool with_alpha = !d_alpha.empty();
    if (with_alpha && d_alpha.size() != d_image.pixel_count())
        throw Error("DimensionMismatch", "alpha gradient does not match the render size");

    // Per-pixel chain rule into per-entry slots; each tile owns its slots.
    std::vector<SplatGrad> entry_grads(bins.entries.size(), SplatGrad{});
    parallel_for(static_cast<std::size_t>(bins.tile_count()), [&](std::size_t t) {
        const int tx = static_cast<int>(t) % bins.tiles_x;
        const int ty = static_cast<int>(t) / bins.tiles_x;
        const std::uint32_t begin = bins.offsets[t];
        thread_local std::vector<TileSplat> list;
        gather_tile(bins.tile(tx, ty), projections, cfg, list);
        const int x_end = std::min(cam.width, (tx + 1) * bins.tile_size);
        const int y_end = std::min(cam.height, (ty + 1) * bins.tile_size);
        thread_local std::vector<Contributor> contributors;
        for (int y = ty * bins.tile_size; y < y_end; ++y) {
            for (int x = tx * bins.tile_size; x < x_end; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                contributors.clear();
                double transmittance = 1.0;
                for (std::uint32_t k = 0; k < list.size(); ++k) {
                    const TileSplat& s = list[k];
                    Contributor c;
                    c.alpha = splat_alpha(s, px, py, cfg, c.falloff, c.dx, c.dy);
                    if (c.alpha == 0.0) continue;
                    c.entry = k;
                    c.transmittance = transmittance;
                    c.capped = s.opacity * c.falloff > cfg.alpha_cap;
                    contributors.push_back(c);
                    transmittance *= 1.0 - c.alpha;
                    if (transmittance < cfg.transmittance_min) break;
                }
                if (contributors.empty()) continue;

                const Eigen::Vector3d g_pix = d_image.rgb(x, y);
                const double g_alpha = with_alpha ? d_alpha[static_cast<std::size_t>(y) * cam.width + x] : 0.0;
                Eigen::Vector3d behind = state.background;  // color seen behind splat i, at unit transmittance
                double behind_t = 1.0;                      // prod of (1 - alpha_j), j > i
                for (auto it = contributors.rbegin(); it != contributors.rend(); ++it) {
                    const TileSplat& s = list[it->entry];
                    SplatGrad& g = entry_grads[begin + it->entry];
                    const Eigen::Vector3d color(s.color[0], s.color[1], s.color[2]);
                    const double weight = it->alpha * it->transmittance;
                    for (int ch = 0; ch < 3; ++ch) g.color[ch] += weight * g_pix[ch];
                    const double d_a = it->transmittance * (color - behind).dot(g_pix) +
                                       g_alpha * it->transmittance * behind_t;
                    behind = color * it->alpha + (1.0 - it->alpha) * behind;
                    behind_t *= 1.0 - it->alpha;
                    if (it->capped) continue;
                    g.opacity += d_a * it->falloff;
                    const double d_g = d_a * s.opacity * it->falloff;  // dL/d(power)
                    const double dx = it->dx, dy = it->dy;
                    g.mean[0] += d_g * (s.ca * dx + s.cb * dy);
                    g.mean[1] += d_g * (s.cb * dx + s.cc * dy);
                    g.conic[0] += -0.5 * d_g * dx * dx;
                    g.conic[1] += -d_g * dx * dy;
                    g.conic[2] += -0.5 * d_g * dy * dy;
                }
            }
        }
    });

    // Reduce entries per splat in fixed tile order.
    std::vector<SplatGrad> splat_grads(projections.size(), SplatGrad{});
    for (std::size_t e = 0; e < bins.entries.size(); ++e) {
        SplatGrad& dst = splat_grads[bins.entries[e]];
        const SplatGrad& src = entry_grads[e];
        dst.mean[0] += src.mean[0];
        dst.mean[1] += src.mean[1];
        for (int k = 0; k < 3; ++k) {
            dst.conic[k] += src.conic[k];
            dst.color[k] += src.color[k];
        }
        dst.opacity += src.opacity;
    }

    // Per-Gaussian chain through projection, covariance and SH.
    CloudGradients out = CloudGradients::zeros(cloud.size());
    const ViewFrame frame(cam, cfg);
    for (const auto& s : projections) out.visible[static_cast<std::size_t>(s.index)] = true;
    parallel_for(projections.size(), [&](std::size_t k) {
        const auto& s = projections[k];
        const Eigen::Index i = s.index;
        const SplatGrad& sg = splat_grads[k];
        GaussianTerms g;
        compute_terms(cloud, i, frame, cfg, g);

        // Opacity through the sigmoid.
        out.opacity_logits[i] = sg.opacity * s.opacity * (1.0 - s.opacity);

        // Color through the clamp and SH.
        const int active = sh_coeff_count(cloud.sh_degree);
        Eigen::Vector3d d_raw;
        for (int ch = 0; ch < 3; ++ch) {
            const bool clamped = g.raw_color[ch] < 0.0 || g.raw_color[ch] > 1.0;
            d_raw[ch] = clamped ? 0.0 : sg.color[ch];
            for (int b = 0; b < active; ++b) out.sh(i, ch * kShCoeffsPerChannel + b) = d_raw[ch] * g.basis[b];
        }
        Eigen::Vector3d d_mean = Eigen::Vector3d::Zero();
        if (cloud.sh_degree > 0 && g.dir_len > 0) {
            const auto basis_jac = sh_basis_jacobian<double>(cloud.sh_degree, g.dir);
            Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
            for (int ch = 0; ch < 3; ++ch) {
                if (d_raw[ch] == 0.0) continue;
                const auto coeffs = cloud.sh.row(i).segment<kShCoeffsPerChannel>(ch * kShCoeffsPerChannel);
                d_dir += d_raw[ch] * (basis_jac.transpose() * coeffs.transpose());
            }
            d_mean += (d_dir - g.dir * g.dir.dot(d_dir)) / g.dir_len;
        }

        // Conic -> 2D covariance: dL/dSigma2 = -Q (dL/dQ) Q.
        Eigen::Matrix2d q_inv;
        q_inv << s.conic[0], s.conic[1], s.conic[1], s.conic[2];
        Eigen::Matrix2d d_conic;
        d_conic << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
        const Eigen::Matrix2d d_cov2 = -q_inv * d_conic * q_inv;

        // Sigma2 = T Sigma T^T with T = J W.
        const Eigen::Matrix3d d_cov3 = g.tw.transpose() * d_cov2 * g.tw;
        const Eigen::Matrix<double, 2, 3> d_tw = 2.0 * d_cov2 * g.tw * g.cov3;
        const Eigen::Matrix<double, 2, 3> d_jac = d_tw * frame.rotation.transpose();

        // Sigma = M M^T with M = R S.
        const Eigen::Matrix3d m = g.rot * g.scale.asDiagonal();
        const Eigen::Matrix3d d_m = 2.0 * d_cov3 * m;
        const Eigen::Matrix3d d_rot = d_m * g.scale.asDiagonal();
        const Eigen::Vector3d d_scale = (g.rot.transpose() * d_m).diagonal();
        out.log_scales.row(i) = d_scale.cwiseProduct(g.scale).transpose();

        const auto partials = rotation_partials(g.q_unit);
        Eigen::Vector4d d_q_unit;
        for (int a = 0; a < 4; ++a) d_q_unit[a] = partials[a].cwiseProduct(d_rot).sum();
        out.rotations.row(i) = ((d_q_unit - g.q_unit * g.q_unit.dot(d_q_unit)) / g.q_norm).transpose();

        // View-space position through the Jacobian and the perspective mean.
        const double tz = g.view.z();
        Eigen::Vector3d d_view = Eigen::Vector3d::Zero();
        d_view.z() += -d_jac(0, 0) * frame.fx / (tz * tz) - d_jac(1, 1) * frame.fy / (tz * tz) +
                      d_jac(0, 2) * frame.fx * g.uc / (tz * tz) + d_jac(1, 2) * frame.fy * g.vc / (tz * tz);
        const double d_uc = -d_jac(0, 2) * frame.fx / tz;
        const double d_vc = -d_jac(1, 2) * frame.fy / tz;
        double d_u = frame.fx * sg.mean[0];
        double d_v = frame.fy * sg.mean[1];
        if (g.u > frame.u_lo && g.u < frame.u_hi) d_u += d_uc;
        if (g.v > frame.v_lo && g.v < frame.v_hi) d_v += d_vc;
        d_view.x() += d_u / tz;
        d_view.y() += d_v / tz;
        d_view.z() += -(d_u * g.u + d_v * g.v) / tz;
        d_mean += frame.rotation.transpose() * d_view;
        out.means.row(i) = d_mean.transpose();

        out.screen_grad_norm[i] =
            std::hypot(sg.mean[0] * 0.5 * cam.width, sg.mean[1] * 0.5 * cam.height);
    });

    check_finite(out);
    return out;
}

// ---------------------------------------------------------------------------
// Raw dumps
// ---------------------------------------------------------------------------

void write_raw_render(const std::filesystem::path& path, const RenderedView& view) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("WriteFailed", "cannot write " + path.string());
    const std::int32_t dims[2] = {view.image.width, view.image.height};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    const std::size_t n = view.image.pixel_count();
    std::vector<double> plane(n);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < n; ++p) plane[p] = view.image.pixels[p * 3 + c];
        out.write(reinterpret_cast<const char*>(plane.data()), static_cast<std::streamsize>(n * sizeof(double)));
    }
    out.write(reinterpret_cast<const char*>(view.alpha.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

RenderedView read_raw_render(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("MissingFile", "cannot open " + path.string());
    std::int32_t dims[2];
    if (!in.read(reinterpret_cast<char*>(dims), sizeof(dims)) || dims[0] <= 0 || dims[1] <= 0)
        throw Error("MalformedFile", "bad raw render header in " + path.string());
    RenderedView view;
    view.image = ImageRGB(dims[0], dims[1]);
    const std::size_t n = view.image.pixel_count();
    std::vector<double> plane(n);
    for (int c = 0; c < 3; ++c) {
        if (!in.read(reinterpret_cast<char*>(plane.data()), static_cast<std::streamsize>(n * sizeof(double))))
            throw Error("MalformedFile", "truncated raw render " + path.string());
        for (std::size_t p = 0; p < n; ++p) view.image.pixels[p * 3 + c] = plane[p];
    }
    view.alpha.resize(n);
    if (!in.read(reinterpret_cast<char*>(view.alpha.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw Error("MalformedFile", "truncated raw render " + path.string());
    return view;
}

} // namespace rsosplat
