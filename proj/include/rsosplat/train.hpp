#pragma once

#include "rsosplat/colmap.hpp"
#include "rsosplat/gaussian.hpp"
#include "rsosplat/image.hpp"
#include "rsosplat/metrics.hpp"
#include "rsosplat/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rsosplat {

/// Every field is addressable as `key = value` in a config file and through
/// set(). Learning rates are Adam step sizes; the means rate is multiplied by
/// the scene extent and decays log-linearly to lr_means * lr_means_final_factor.
struct TrainConfig {
    int iterations = 7000;
    double lambda_dssim = 0.2;

    double lr_means = 1.6e-4;
    double lr_means_final_factor = 0.01;
    double lr_log_scales = 5e-3;
    double lr_rotations = 1e-3;
    double lr_opacity = 5e-2;
    double lr_sh = 2.5e-3;
    double sh_rest_lr_factor = 0.05;  // higher-order SH use lr_sh times this

    int densify_interval = 100;
    int densify_from = 500;
    int densify_until = -1;  // -1: half of the run
    double densify_grad_threshold = 2e-4;
    double split_scale_fraction = 0.01;  // of scene extent; larger Gaussians split
    double split_factor = 1.6;
    int split_children = 2;
    double clone_nudge = 0.5;            // clone offset, in units of its largest sigma
    double prune_opacity = 0.005;
    double prune_extent_fraction = 0.1;  // largest sigma above this fraction of extent is pruned
    int max_gaussians = 0;               // 0: unbounded

    int opacity_reset_interval = 3000;
    double opacity_reset_value = 0.01;
    int sh_degree_interval = 1000;
    int max_sh_degree = 3;

    std::uint64_t seed = 0;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int checkpoint_interval = 0;  // 0: final model only
    RasterConfig raster;

    int effective_densify_until() const { return densify_until < 0 ? iterations / 2 : densify_until; }

    /// Sets one field from its textual value. Throws UnknownConfigKey or
    /// BadConfigValue.
    void set(const std::string& key, const std::string& value);
    std::vector<std::string> keys() const;
    std::string get(const std::string& key) const;

    /// `key = value` lines that read back to an identical config.
    std::string dump() const;
    /// Applies a key = value file on top of the current values.
    void load_file(const std::filesystem::path& path);
    void parse(const std::string& text, const std::string& origin = "<config>");
    /// Throws InvalidConfig when an invariant is violated.
    void validate() const;

    friend bool operator==(const TrainConfig& a, const TrainConfig& b) { return a.dump() == b.dump(); }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossValue {
    double total = 0;
    double l1 = 0;
    double dssim = 0;
    double ssim = 1;
    ImageRGB gradient;  // d total / d render
};

/// (1 - lambda) * l1 + lambda * (1 - ssim) / 2.
inline double combined_loss(double l1, double ssim, double lambda) {
    return (1.0 - lambda) * l1 + lambda * dssim(ssim);
}

/// combined_loss of the mean absolute error and SSIM of render against truth,
/// with its gradient with respect to the rendered pixels. Throws
/// DimensionMismatch.
LossValue photometric_loss(const ImageRGB& render, const ImageRGB& truth, double lambda);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-15;

/// Adam moments for every parameter array, row-aligned with the cloud.
struct AdamMoments {
    CloudGradients first;
    CloudGradients second;
    int step = 0;

    static AdamMoments zeros(Eigen::Index n);
    Eigen::Index size() const { return first.means.rows(); }
};

struct LearningRates {
    double means, log_scales, rotations, opacity, sh_dc, sh_rest;
};

LearningRates learning_rates(const TrainConfig& config, int iteration, double scene_extent);

/// One bias-corrected Adam update per parameter group, then quaternion
/// renormalization. Throws NonFiniteGradient.
void adam_step(GaussianCloud& cloud, AdamMoments& moments, const CloudGradients& grads, const LearningRates& rates);

// ---------------------------------------------------------------------------
// Densification
// ---------------------------------------------------------------------------

struct TrainState;

struct DensifyReport {
    Eigen::Index cloned = 0;
    Eigen::Index split = 0;
    Eigen::Index pruned = 0;
};

/// Clone/split Gaussians whose mean accumulated screen gradient exceeds the
/// threshold, then prune transparent or oversized ones. Moments of new
/// Gaussians start at zero; the gradient accumulators are reset. Throws
/// EmptyCloud if nothing survives.
DensifyReport densify_and_prune(GaussianCloud& cloud, TrainState& state, const TrainConfig& config,
                                double scene_extent, std::mt19937_64& rng);

/// Caps every opacity at the reset value and clears the opacity moments.
void reset_opacity(GaussianCloud& cloud, TrainState& state, double value);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LossRecord {
    int iteration = 0;
    double l1 = 0;
    double dssim = 0;
    double total = 0;
    Eigen::Index gaussians = 0;
    double elapsed_s = 0;
};

struct TrainState {
    int iteration = 0;
    AdamMoments moments;
    RowMatrix<double, 1> grad_accum;       // summed screen-gradient norms
    RowMatrix<double, 1> grad_count;       // views in which each Gaussian was visible
    RowMatrix<double, 3> mean_grad_accum;  // summed world-space mean gradients
    std::vector<LossRecord> history;

    void reset_accumulators(Eigen::Index n);
    /// Every per-Gaussian array has n rows.
    bool consistent_with(Eigen::Index n) const;
};

struct TrainCallbacks {
    std::function<void(int iteration, const GaussianCloud&)> checkpoint;
    std::function<void(const LossRecord&)> progress;
};

struct TrainResult {
    GaussianCloud cloud;
    TrainState state;
    double scene_extent = 0;
    double seconds = 0;
};

/// Optimizes a cloud seeded from the bundle's points against the listed
/// training views (which must carry images). Deterministic for a fixed seed
/// regardless of thread count.
TrainResult train(const SfmBundle& bundle, std::span<const std::size_t> train_views, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

std::string loss_history_csv(const std::vector<LossRecord>& history);

} // namespace rsosplat
