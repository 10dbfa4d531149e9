#pragma once

#include <Eigen/Core>

#include <algorithm>

namespace rsosplat {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kShCoeffsPerChannel = 16;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Real spherical-harmonic basis with the Condon-Shortley phase, in the
// ordering used by the community splat PLY layout.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                    -1.0925484305920792, 0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                    0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                    -0.5900435899266435};

template <typename Scalar>
using ShBasisVector = Eigen::Matrix<Scalar, kShCoeffsPerChannel, 1>;

/// Evaluates the (degree+1)^2 basis functions at a unit direction; entries
/// beyond the degree are zero.
template <typename Scalar>
ShBasisVector<Scalar> sh_basis(int degree, const Eigen::Matrix<Scalar, 3, 1>& dir) {
    ShBasisVector<Scalar> y = ShBasisVector<Scalar>::Zero();
    y[0] = Scalar(kShC0);
    if (degree < 1) return y;
    const Scalar x = dir.x(), yy = dir.y(), z = dir.z();
    y[1] = -Scalar(kShC1) * yy;
    y[2] = Scalar(kShC1) * z;
    y[3] = -Scalar(kShC1) * x;
    if (degree < 2) return y;
    const Scalar xx = x * x, y2 = yy * yy, zz = z * z;
    y[4] = Scalar(kShC2[0]) * x * yy;
    y[5] = Scalar(kShC2[1]) * yy * z;
    y[6] = Scalar(kShC2[2]) * (2 * zz - xx - y2);
    y[7] = Scalar(kShC2[3]) * x * z;
    y[8] = Scalar(kShC2[4]) * (xx - y2);
    if (degree < 3) return y;
    y[9] = Scalar(kShC3[0]) * yy * (3 * xx - y2);
    y[10] = Scalar(kShC3[1]) * x * yy * z;
    y[11] = Scalar(kShC3[2]) * yy * (4 * zz - xx - y2);
    y[12] = Scalar(kShC3[3]) * z * (2 * zz - 3 * xx - 3 * y2);
    y[13] = Scalar(kShC3[4]) * x * (4 * zz - xx - y2);
    y[14] = Scalar(kShC3[5]) * z * (xx - y2);
    y[15] = Scalar(kShC3[6]) * x * (xx - 3 * y2);
    return y;
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components, treating (x, y, z) as independent.
template <typename Scalar>
Eigen::Matrix<Scalar, kShCoeffsPerChannel, 3> sh_basis_jacobian(int degree,
                                                                const Eigen::Matrix<Scalar, 3, 1>& dir) {
    Eigen::Matrix<Scalar, kShCoeffsPerChannel, 3> j = Eigen::Matrix<Scalar, kShCoeffsPerChannel, 3>::Zero();
    if (degree < 1) return j;
    const Scalar x = dir.x(), y = dir.y(), z = dir.z();
    j(1, 1) = -Scalar(kShC1);
    j(2, 2) = Scalar(kShC1);
    j(3, 0) = -Scalar(kShC1);
    if (degree < 2) return j;
    const Scalar xx = x * x, yy = y * y, zz = z * z;
    j.row(4) << Scalar(kShC2[0]) * y, Scalar(kShC2[0]) * x, Scalar(0);
    j.row(5) << Scalar(0), Scalar(kShC2[1]) * z, Scalar(kShC2[1]) * y;
    j.row(6) << Scalar(kShC2[2]) * -2 * x, Scalar(kShC2[2]) * -2 * y, Scalar(kShC2[2]) * 4 * z;
    j.row(7) << Scalar(kShC2[3]) * z, Scalar(0), Scalar(kShC2[3]) * x;
    j.row(8) << Scalar(kShC2[4]) * 2 * x, Scalar(kShC2[4]) * -2 * y, Scalar(0);
    if (degree < 3) return j;
    j.row(9) << Scalar(kShC3[0]) * 6 * x * y, Scalar(kShC3[0]) * 3 * (xx - yy), Scalar(0);
    j.row(10) << Scalar(kShC3[1]) * y * z, Scalar(kShC3[1]) * x * z, Scalar(kShC3[1]) * x * y;
    j.row(11) << Scalar(kShC3[2]) * -2 * x * y, Scalar(kShC3[2]) * (4 * zz - xx - 3 * yy),
        Scalar(kShC3[2]) * 8 * y * z;
    j.row(12) << Scalar(kShC3[3]) * -6 * x * z, Scalar(kShC3[3]) * -6 * y * z,
        Scalar(kShC3[3]) * (6 * zz - 3 * xx - 3 * yy);
    j.row(13) << Scalar(kShC3[4]) * (4 * zz - 3 * xx - yy), Scalar(kShC3[4]) * -2 * x * y,
        Scalar(kShC3[4]) * 8 * x * z;
    j.row(14) << Scalar(kShC3[5]) * 2 * x * z, Scalar(kShC3[5]) * -2 * y * z, Scalar(kShC3[5]) * (xx - yy);
    j.row(15) << Scalar(kShC3[6]) * 3 * (xx - yy), Scalar(kShC3[6]) * -6 * x * y, Scalar(0);
    return j;
}

/// Per-channel coefficients laid out channel-major: [c * 16 + k].
template <typename Scalar>
using ShCoeffs = Eigen::Matrix<Scalar, 3 * kShCoeffsPerChannel, 1>;

/// Unclamped radiance: sum_k coeff_k * Y_k(dir) + 0.5 per channel.
template <typename Derived, typename Scalar>
Eigen::Matrix<Scalar, 3, 1> sh_radiance(const Eigen::MatrixBase<Derived>& coeffs,
                                        const ShBasisVector<Scalar>& basis) {
    Eigen::Matrix<Scalar, 3, 1> c;
    for (int ch = 0; ch < 3; ++ch)
        c[ch] = coeffs.template segment<kShCoeffsPerChannel>(ch * kShCoeffsPerChannel).dot(basis) + Scalar(0.5);
    return c;
}

/// View-dependent color clamped to [0, 1].
template <typename Derived, typename Scalar>
Eigen::Matrix<Scalar, 3, 1> sh_to_rgb(const Eigen::MatrixBase<Derived>& coeffs,
                                      const Eigen::Matrix<Scalar, 3, 1>& dir, int degree) {
    const Eigen::Matrix<Scalar, 3, 1> c = sh_radiance(coeffs, sh_basis<Scalar>(degree, dir));
    return c.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

/// DC coefficient producing the given channel value (inverse of the 0.5 offset).
inline double rgb_to_sh_dc(double value) { return (value - 0.5) / kShC0; }

} // namespace rsosplat
