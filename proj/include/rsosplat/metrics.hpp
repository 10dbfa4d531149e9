#pragma once

#include "rsosplat/colmap.hpp"
#include "rsosplat/gaussian.hpp"
#include "rsosplat/image.hpp"
#include "rsosplat/raster.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rsosplat {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over all channels with peak 1; 100 dB when identical.
double psnr(const ImageRGB& a, const ImageRGB& b);

/// SSIM constants: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1. Only windows fully inside the image count.
struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean local SSIM per channel, averaged over the three channels.
double ssim(const ImageRGB& a, const ImageRGB& b, const SsimParams& params = {});

struct SsimWithGradient {
    double value = 0;
    ImageRGB gradient;  // d ssim / d a
};

/// SSIM plus its analytic gradient with respect to the first image.
SsimWithGradient ssim_with_gradient(const ImageRGB& a, const ImageRGB& b, const SsimParams& params = {});

inline double dssim(double ssim_value) { return (1.0 - ssim_value) / 2.0; }

/// Normalized 1D Gaussian window weights.
std::vector<double> gaussian_window(int size, double sigma);

struct QualityScores {
    std::vector<std::string> views;
    std::vector<double> ssim;
    std::vector<double> psnr;
    double mean_ssim = 0;
    double mean_psnr = 0;

    void finalize();  // recomputes the means from the per-view lists
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Renders each listed view of the bundle and scores it against the view's
/// ground-truth image. Throws EmptyTestSet.
QualityScores evaluate(const GaussianCloud& cloud, const SfmBundle& bundle, std::span<const std::size_t> views,
                       const Eigen::Vector3d& background, const RasterConfig& config = {});

} // namespace rsosplat
