#pragma once

#include "rsosplat/camera.hpp"
#include "rsosplat/colmap.hpp"
#include "rsosplat/sh.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <span>
#include <vector>

namespace rsosplat {

template <typename Scalar, int Cols>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Cols, Cols == 1 ? Eigen::ColMajor : Eigen::RowMajor>;

/// Learnable scene: one row per Gaussian in every array.
///
/// Covariance is stored factored as rotation (unit quaternion, w first) and
/// per-axis log standard deviations, so the rebuilt matrix is always
/// symmetric positive-definite. Opacity is a logit, alpha = sigmoid(logit).
/// SH coefficients are channel-major, [c * 16 + k]; only the first
/// (sh_degree + 1)^2 per channel take part in rendering.
struct GaussianCloud {
    RowMatrix<double, 3> means;
    RowMatrix<double, 3> log_scales;
    RowMatrix<double, 4> rotations;
    RowMatrix<double, 1> opacity_logits;
    RowMatrix<double, 3 * kShCoeffsPerChannel> sh;
    int sh_degree = 0;

    Eigen::Index size() const { return means.rows(); }
    void resize(Eigen::Index n);

    /// Copies row `from` of `source` into row `to` of this cloud.
    void copy_row(Eigen::Index to, const GaussianCloud& source, Eigen::Index from);
    /// Keeps rows where keep[i] is true, preserving order.
    void filter(const std::vector<bool>& keep);
    /// Appends all rows of other.
    void append(const GaussianCloud& other);

    double opacity(Eigen::Index i) const { return 1.0 / (1.0 + std::exp(-opacity_logits[i])); }

    /// NaN/inf anywhere in any parameter array.
    bool all_finite() const;

    friend bool operator==(const GaussianCloud&, const GaussianCloud&) = default;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Sigma = R diag(exp(2 log_scale)) R^T.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> covariance_from_params(const Eigen::Matrix<Scalar, 3, 1>& log_scale,
                                                   const Eigen::Matrix<Scalar, 4, 1>& rotation) {
    const Eigen::Matrix<Scalar, 3, 3> r = quaternion_to_matrix<Scalar>(rotation.normalized());
    const Eigen::Matrix<Scalar, 3, 3> m = r * log_scale.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

/// Normalized trivariate normal density at x. Throws SingularCovariance when
/// the condition number exceeds 1e12 or the matrix is not positive-definite.
double density_at(const Eigen::Vector3d& mean, const Eigen::Matrix3d& covariance, const Eigen::Vector3d& x);

/// Covariance of Gaussian i of the cloud.
Eigen::Matrix3d covariance_of(const GaussianCloud& cloud, Eigen::Index i);

/// Initial opacity given to freshly seeded Gaussians.
inline constexpr double kInitialOpacity = 0.1;

/// One Gaussian per sparse point: mean at the point, isotropic scale equal to
/// the mean distance to its three nearest neighbours, identity rotation,
/// opacity 0.1 and DC color from the point color. Throws TooFewPoints below 4.
GaussianCloud init_from_points(std::span<const SparsePoint> points);

/// Mean distance from each point to its three nearest other points, using a
/// uniform grid for exact neighbour search.
std::vector<double> mean_knn3_distance(std::span<const Eigen::Vector3d> positions);

/// Radius of the bounding sphere of the points around their centroid.
double scene_extent(std::span<const SparsePoint> points);

} // namespace rsosplat
