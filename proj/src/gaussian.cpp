#include "rsosplat/gaussian.hpp"

#include "rsosplat/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <array>
#include <limits>
#include <numbers>

namespace rsosplat {

void GaussianCloud::resize(Eigen::Index n) {
    means.resize(n, 3);
    log_scales.resize(n, 3);
    rotations.resize(n, 4);
    opacity_logits.resize(n);
    sh.resize(n, 3 * kShCoeffsPerChannel);
}

void GaussianCloud::copy_row(Eigen::Index to, const GaussianCloud& source, Eigen::Index from) {
    means.row(to) = source.means.row(from);
    log_scales.row(to) = source.log_scales.row(from);
    rotations.row(to) = source.rotations.row(from);
    opacity_logits[to] = source.opacity_logits[from];
    sh.row(to) = source.sh.row(from);
}

void GaussianCloud::filter(const std::vector<bool>& keep) {
    GaussianCloud out;
    out.sh_degree = sh_degree;
    out.resize(std::count(keep.begin(), keep.end(), true));
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < size(); ++i)
        if (keep[i]) out.copy_row(k++, *this, i);
    *this = std::move(out);
}

void GaussianCloud::append(const GaussianCloud& other) {
    const Eigen::Index n = size();
    GaussianCloud out;
    out.sh_degree = sh_degree;
    out.resize(n + other.size());
    out.means << means, other.means;
    out.log_scales << log_scales, other.log_scales;
    out.rotations << rotations, other.rotations;
    out.opacity_logits << opacity_logits, other.opacity_logits;
    out.sh << sh, other.sh;
    *this = std::move(out);
}

bool GaussianCloud::all_finite() const {
    return means.allFinite() && log_scales.allFinite() && rotations.allFinite() &&
           opacity_logits.allFinite() && sh.allFinite();
}

Eigen::Matrix3d covariance_of(const GaussianCloud& cloud, Eigen::Index i) {
    return covariance_from_params<double>(cloud.log_scales.row(i).transpose(),
                                          cloud.rotations.row(i).transpose());
}

double density_at(const Eigen::Vector3d& mean, const Eigen::Matrix3d& covariance, const Eigen::Vector3d& x) {
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(covariance, Eigen::EigenvaluesOnly);
    const Eigen::Vector3d ev = eig.eigenvalues();
    if (!(ev.minCoeff() > 0) || ev.maxCoeff() / ev.minCoeff() > 1e12)
        throw Error("SingularCovariance", "covariance is singular or ill-conditioned");
    const Eigen::LLT<Eigen::Matrix3d> llt(covariance);
    const Eigen::Vector3d d = x - mean;
    const double mahalanobis = d.dot(llt.solve(d));
    const double det = ev.prod();
    return std::exp(-0.5 * mahalanobis) / (std::pow(2.0 * std::numbers::pi, 1.5) * std::sqrt(det));
}

// ---------------------------------------------------------------------------
// Nearest neighbours
// ---------------------------------------------------------------------------

namespace {

class UniformGrid {
    static constexpr double kMaxCellsPerAxis = 256.0;

public:
    explicit UniformGrid(std::span<const Eigen::Vector3d> pts) : pts_(pts) {
        lo_ = hi_ = pts.front();
        for (const auto& p : pts) {
            lo_ = lo_.cwiseMin(p);
            hi_ = hi_.cwiseMax(p);
        }
        const Eigen::Vector3d ext = hi_ - lo_;
        const double largest = ext.maxCoeff();
        double volume = 1.0;
        int dims = 0;
        for (int k = 0; k < 3; ++k)
            if (ext[k] > 1e-12 * std::max(1.0, largest)) {
                volume *= ext[k];
                ++dims;
            }
        cell_ = dims == 0 ? 1.0 : std::pow(volume / static_cast<double>(pts.size()), 1.0 / dims);
        if (!(cell_ > 0) || !std::isfinite(cell_)) cell_ = 1.0;
        cell_ = std::max(cell_, largest / kMaxCellsPerAxis);
        for (int k = 0; k < 3; ++k)
            dims_[k] = static_cast<long>(ext[k] / cell_) + 1;
        buckets_.resize(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]));
        for (std::size_t i = 0; i < pts.size(); ++i) buckets_[bucket_of(cell_coords(pts[i]))].push_back(i);
    }

    /// Three smallest distances to other points, ascending.
    std::array<double, 3> nearest3(std::size_t query) const {
        std::array<double, 3> best_sq;
        best_sq.fill(std::numeric_limits<double>::infinity());
        const auto home = cell_coords(pts_[query]);
        const long max_ring = std::max({dims_[0], dims_[1], dims_[2]});
        for (long ring = 0; ring <= max_ring; ++ring) {
            visit_ring(home, ring, [&](std::size_t j) {
                if (j == query) return;
                const double d2 = (pts_[j] - pts_[query]).squaredNorm();
                if (d2 < best_sq[2]) {
                    best_sq[2] = d2;
                    std::sort(best_sq.begin(), best_sq.end());
                }
            });
            const double reach = ring * cell_;
            if (best_sq[2] <= reach * reach) break;
        }
        return {std::sqrt(best_sq[0]), std::sqrt(best_sq[1]), std::sqrt(best_sq[2])};
    }

private:
    using Coords = std::array<long, 3>;

    Coords cell_coords(const Eigen::Vector3d& p) const {
        Coords c;
        for (int k = 0; k < 3; ++k)
            c[k] = std::clamp(static_cast<long>((p[k] - lo_[k]) / cell_), 0L, dims_[k] - 1);
        return c;
    }

    std::size_t bucket_of(const Coords& c) const {
        return static_cast<std::size_t>((c[2] * dims_[1] + c[1]) * dims_[0] + c[0]);
    }

    template <typename Fn>
    void visit_ring(const Coords& home, long ring, Fn&& fn) const {
        for (long dz = -ring; dz <= ring; ++dz)
            for (long dy = -ring; dy <= ring; ++dy)
                for (long dx = -ring; dx <= ring; ++dx) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                    const Coords c{home[0] + dx, home[1] + dy, home[2] + dz};
                    if (c[0] < 0 || c[1] < 0 || c[2] < 0 || c[0] >= dims_[0] || c[1] >= dims_[1] ||
                        c[2] >= dims_[2])
                        continue;
                    for (std::size_t j : buckets_[bucket_of(c)]) fn(j);
                }
    }

    std::span<const Eigen::Vector3d> pts_;
    Eigen::Vector3d lo_, hi_;
    double cell_ = 1.0;
    std::array<long, 3> dims_{1, 1, 1};
    std::vector<std::vector<std::size_t>> buckets_;
};

} // namespace

std::vector<double> mean_knn3_distance(std::span<const Eigen::Vector3d> positions) {
    if (positions.size() < 4) throw Error("TooFewPoints", "need at least 4 points for 3-NN scales");
    const UniformGrid grid(positions);
    std::vector<double> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto d = grid.nearest3(i);
        out[i] = (d[0] + d[1] + d[2]) / 3.0;
    }
    return out;
}

GaussianCloud init_from_points(std::span<const SparsePoint> points) {
    if (points.size() < 4)
        throw Error("TooFewPoints", "scene initialization needs at least 4 points, got " +
                                        std::to_string(points.size()));
    std::vector<Eigen::Vector3d> positions;
    positions.reserve(points.size());
    for (const auto& p : points) positions.push_back(p.position);
    const std::vector<double> nn = mean_knn3_distance(positions);

    GaussianCloud cloud;
    cloud.resize(static_cast<Eigen::Index>(points.size()));
    cloud.sh.setZero();
    cloud.sh_degree = 0;
    const double opacity_logit = logit(kInitialOpacity);
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        const auto& p = points[i];
        cloud.means.row(i) = p.position.transpose();
        // Coincident points would give a zero scale; floor it.
        cloud.log_scales.row(i).setConstant(std::log(std::max(nn[i], 1e-7)));
        cloud.rotations.row(i) << 1, 0, 0, 0;
        cloud.opacity_logits[i] = opacity_logit;
        for (int c = 0; c < 3; ++c) cloud.sh(i, c * kShCoeffsPerChannel) = rgb_to_sh_dc(p.color[c]);
    }
    return cloud;
}

double scene_extent(std::span<const SparsePoint> points) {
    if (points.empty()) return 0.0;
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : points) centroid += p.position;
    centroid /= static_cast<double>(points.size());
    double r = 0.0;
    for (const auto& p : points) r = std::max(r, (p.position - centroid).norm());
    return r;
}

} // namespace rsosplat
