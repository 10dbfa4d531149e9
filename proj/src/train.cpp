#include "rsosplat/train.hpp"

#include "rsosplat/error.hpp"
#include "rsosplat/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rsosplat {

LossValue photometric_loss(const ImageRGB& render, const ImageRGB& truth, double lambda) {
    if (!render.same_size(truth))
        throw Error("DimensionMismatch", "loss: render and truth differ in size");
    const auto n = static_cast<double>(render.pixels.size());

    SsimWithGradient s = ssim_with_gradient(render, truth);
    LossValue out;
    out.ssim = s.value;
    out.dssim = dssim(s.value);
    out.gradient = std::move(s.gradient);

    double l1 = 0;
    const double w_l1 = (1.0 - lambda) / n;
    const double w_ssim = -0.5 * lambda;
    for (std::size_t k = 0; k < render.pixels.size(); ++k) {
        const double d = render.pixels[k] - truth.pixels[k];
        l1 += std::abs(d);
        const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        out.gradient.pixels[k] = w_l1 * sign + w_ssim * out.gradient.pixels[k];
    }
    out.l1 = l1 / n;
    out.total = combined_loss(out.l1, out.ssim, lambda);
    return out;
}

AdamMoments AdamMoments::zeros(Eigen::Index n) {
    return {CloudGradients::zeros(n), CloudGradients::zeros(n), 0};
}

LearningRates learning_rates(const TrainConfig& config, int iteration, double scene_extent) {
    const double t = config.iterations > 0 ? std::clamp(static_cast<double>(iteration) / config.iterations, 0.0, 1.0)
                                           : 0.0;
    const double decay = std::pow(config.lr_means_final_factor, t);
    return {config.lr_means * scene_extent * decay,
            config.lr_log_scales,
            config.lr_rotations,
            config.lr_opacity,
            config.lr_sh,
            config.lr_sh * config.sh_rest_lr_factor};
}

namespace {

template <typename Params, typename Grad, typename Rate>
void adam_update(Params& p, Grad& m, Grad& v, const Grad& g, Rate&& rate_for_col, double c1, double c2) {
    for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            const double gi = g(r, c);
            double& mi = m(r, c);
            double& vi = v(r, c);
            mi = kAdamBeta1 * mi + (1.0 - kAdamBeta1) * gi;
            vi = kAdamBeta2 * vi + (1.0 - kAdamBeta2) * gi * gi;
            p(r, c) -= rate_for_col(c) * (mi / c1) / (std::sqrt(vi / c2) + kAdamEpsilon);
        }
}

} // namespace

void adam_step(GaussianCloud& cloud, AdamMoments& moments, const CloudGradients& grads, const LearningRates& rates) {
    const Eigen::Index n = cloud.size();
    if (grads.means.rows() != n || moments.size() != n)
        throw Error("DimensionMismatch", "adam_step: gradient or moment rows differ from the cloud");
    if (!grads.all_finite()) throw Error("NonFiniteGradient", "adam_step: non-finite gradient");

    ++moments.step;
    const double c1 = 1.0 - std::pow(kAdamBeta1, moments.step);
    const double c2 = 1.0 - std::pow(kAdamBeta2, moments.step);
    auto& m = moments.first;
    auto& v = moments.second;
    auto constant = [](double lr) { return [lr](Eigen::Index) { return lr; }; };

    adam_update(cloud.means, m.means, v.means, grads.means, constant(rates.means), c1, c2);
    adam_update(cloud.log_scales, m.log_scales, v.log_scales, grads.log_scales, constant(rates.log_scales), c1, c2);
    adam_update(cloud.rotations, m.rotations, v.rotations, grads.rotations, constant(rates.rotations), c1, c2);
    adam_update(cloud.opacity_logits, m.opacity_logits, v.opacity_logits, grads.opacity_logits,
                constant(rates.opacity), c1, c2);
    adam_update(cloud.sh, m.sh, v.sh, grads.sh,
                [&](Eigen::Index c) { return c % kShCoeffsPerChannel == 0 ? rates.sh_dc : rates.sh_rest; }, c1, c2);

    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = cloud.rotations.row(i).norm();
        if (norm > 0) cloud.rotations.row(i) /= norm;
        else cloud.rotations.row(i) << 1, 0, 0, 0;
    }
}

void TrainState::reset_accumulators(Eigen::Index n) {
    grad_accum = RowMatrix<double, 1>::Zero(n);
    grad_count = RowMatrix<double, 1>::Zero(n);
    mean_grad_accum = RowMatrix<double, 3>::Zero(n, 3);
}

bool TrainState::consistent_with(Eigen::Index n) const {
    auto rows_ok = [n](const CloudGradients& g) {
        return g.means.rows() == n && g.log_scales.rows() == n && g.rotations.rows() == n &&
               g.opacity_logits.rows() == n && g.sh.rows() == n;
    };
    return rows_ok(moments.first) && rows_ok(moments.second) && grad_accum.rows() == n &&
           grad_count.rows() == n && mean_grad_accum.rows() == n;
}

namespace {

/// Rows of `g` picked by `source`; negative entries become zero rows.
CloudGradients gather(const CloudGradients& g, const std::vector<Eigen::Index>& source) {
    CloudGradients out = CloudGradients::zeros(static_cast<Eigen::Index>(source.size()));
    for (std::size_t k = 0; k < source.size(); ++k) {
        const Eigen::Index s = source[k];
        if (s < 0) continue;
        const auto r = static_cast<Eigen::Index>(k);
        out.means.row(r) = g.means.row(s);
        out.log_scales.row(r) = g.log_scales.row(s);
        out.rotations.row(r) = g.rotations.row(s);
        out.opacity_logits[r] = g.opacity_logits[s];
        out.sh.row(r) = g.sh.row(s);
    }
    return out;
}

double max_sigma(const GaussianCloud& cloud, Eigen::Index i) { return std::exp(cloud.log_scales.row(i).maxCoeff()); }

} // namespace

DensifyReport densify_and_prune(GaussianCloud& cloud, TrainState& state, const TrainConfig& config,
                                double scene_extent, std::mt19937_64& rng) {
    const Eigen::Index n = cloud.size();
    if (!state.consistent_with(n))
        throw Error("DimensionMismatch", "densify_and_prune: optimizer state does not match the cloud");

    const double split_threshold = config.split_scale_fraction * scene_extent;
    std::vector<Eigen::Index> selected;
    std::vector<double> avg(static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (state.grad_count[i] > 0) avg[static_cast<std::size_t>(i)] = state.grad_accum[i] / state.grad_count[i];
        if (avg[static_cast<std::size_t>(i)] > config.densify_grad_threshold) selected.push_back(i);
    }

    // Under a budget, the strongest gradients densify first.
    if (config.max_gaussians > 0) {
        std::stable_sort(selected.begin(), selected.end(), [&](Eigen::Index a, Eigen::Index b) {
            return avg[static_cast<std::size_t>(a)] > avg[static_cast<std::size_t>(b)];
        });
        Eigen::Index budget = std::max<Eigen::Index>(0, config.max_gaussians - n);
        std::vector<Eigen::Index> kept;
        for (Eigen::Index i : selected) {
            const Eigen::Index growth = max_sigma(cloud, i) > split_threshold ? config.split_children - 1 : 1;
            if (growth > budget) continue;
            budget -= growth;
            kept.push_back(i);
        }
        std::sort(kept.begin(), kept.end());
        selected = std::move(kept);
    }

    DensifyReport report;
    std::vector<Eigen::Index> clones;
    std::vector<Eigen::Index> splits;
    std::vector<bool> is_split(static_cast<std::size_t>(n), false);
    for (Eigen::Index i : selected) {
        if (max_sigma(cloud, i) > split_threshold) {
            splits.push_back(i);
            is_split[static_cast<std::size_t>(i)] = true;
        } else {
            clones.push_back(i);
        }
    }
    report.cloned = static_cast<Eigen::Index>(clones.size());
    report.split = static_cast<Eigen::Index>(splits.size());

    // Row sources for the densified cloud: survivors, then clones, then split children.
    std::vector<Eigen::Index> source;
    for (Eigen::Index i = 0; i < n; ++i)
        if (!is_split[static_cast<std::size_t>(i)]) source.push_back(i);
    const auto first_clone = source.size();
    source.insert(source.end(), clones.begin(), clones.end());
    const auto first_child = source.size();
    for (Eigen::Index i : splits)
        for (int c = 0; c < config.split_children; ++c) source.push_back(i);

    GaussianCloud grown;
    grown.sh_degree = cloud.sh_degree;
    grown.resize(static_cast<Eigen::Index>(source.size()));
    for (std::size_t k = 0; k < source.size(); ++k) grown.copy_row(static_cast<Eigen::Index>(k), cloud, source[k]);

    for (std::size_t k = first_clone; k < first_child; ++k) {
        const Eigen::Index i = source[k];
        const Eigen::Vector3d g = state.mean_grad_accum.row(i).transpose();
        const double norm = g.norm();
        if (norm > 0)
            grown.means.row(static_cast<Eigen::Index>(k)) -=
                (config.clone_nudge * max_sigma(cloud, i) / norm) * g.transpose();
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    const double shrink = std::log(config.split_factor);
    for (std::size_t k = first_child; k < source.size(); ++k) {
        const Eigen::Index i = source[k];
        const auto r = static_cast<Eigen::Index>(k);
        const Eigen::Vector3d z(normal(rng), normal(rng), normal(rng));
        const Eigen::Matrix3d rot = quaternion_to_matrix<double>(cloud.rotations.row(i).transpose().normalized());
        const Eigen::Vector3d sigma = cloud.log_scales.row(i).transpose().array().exp();
        grown.means.row(r) += (rot * sigma.cwiseProduct(z)).transpose();
        grown.log_scales.row(r).array() -= shrink;
    }

    std::vector<Eigen::Index> moment_source = source;
    for (std::size_t k = first_clone; k < moment_source.size(); ++k) moment_source[k] = -1;

    // Prune the densified set.
    const double prune_sigma = config.prune_extent_fraction * scene_extent;
    std::vector<bool> keep(source.size());
    std::vector<Eigen::Index> kept_source;
    for (std::size_t k = 0; k < source.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        keep[k] = grown.opacity(r) >= config.prune_opacity && max_sigma(grown, r) <= prune_sigma;
        if (keep[k]) kept_source.push_back(moment_source[k]);
        else ++report.pruned;
    }
    if (kept_source.empty()) throw Error("EmptyCloud", "densify_and_prune: every Gaussian was pruned");

    grown.filter(keep);
    state.moments.first = gather(state.moments.first, kept_source);
    state.moments.second = gather(state.moments.second, kept_source);
    cloud = std::move(grown);
    state.reset_accumulators(cloud.size());
    return report;
}

void reset_opacity(GaussianCloud& cloud, TrainState& state, double value) {
    const double cap = logit(value);
    cloud.opacity_logits = cloud.opacity_logits.cwiseMin(cap);
    state.moments.first.opacity_logits.setZero();
    state.moments.second.opacity_logits.setZero();
}

TrainResult train(const SfmBundle& bundle, std::span<const std::size_t> train_views, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
    config.validate();
    if (train_views.size() < 2) throw Error("TooFewViews", "training needs at least 2 views");
    for (std::size_t v : train_views) {
        if (v >= bundle.views.size()) throw Error("UnknownView", "train view index out of range");
        if (!bundle.views[v].image)
            throw Error("MissingImage", "train view '" + bundle.views[v].name + "' has no image");
    }

    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    TrainResult result;
    result.cloud = init_from_points(bundle.points);
    result.scene_extent = scene_extent(bundle.points);
    GaussianCloud& cloud = result.cloud;
    TrainState& state = result.state;
    state.moments = AdamMoments::zeros(cloud.size());
    state.reset_accumulators(cloud.size());

    std::vector<PinholeCamera> cameras;
    for (std::size_t v : train_views) cameras.push_back(bundle.camera_for(bundle.views[v]));

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_views.size());
    std::size_t cursor = order.size();
    const int densify_until = config.effective_densify_until();

    for (int it = 1; it <= config.iterations; ++it) {
        state.iteration = it;
        if (it % config.sh_degree_interval == 0 && cloud.sh_degree < config.max_sh_degree) ++cloud.sh_degree;

        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::size_t pick = order[cursor++];
        const PosedView& view = bundle.views[train_views[pick]];

        const RenderState rs = render_with_state(cloud, cameras[pick], config.background, config.raster);
        const LossValue loss = photometric_loss(rs.view.image, *view.image, config.lambda_dssim);
        const CloudGradients grads = blend_backward(cloud, rs, loss.gradient);

        if (it <= densify_until) {
            for (Eigen::Index i = 0; i < cloud.size(); ++i) {
                if (!grads.visible[static_cast<std::size_t>(i)]) continue;
                state.grad_accum[i] += grads.screen_grad_norm[i];
                state.grad_count[i] += 1;
                state.mean_grad_accum.row(i) += grads.means.row(i);
            }
        }

        adam_step(cloud, state.moments, grads, learning_rates(config, it, result.scene_extent));

        if (it >= config.densify_from && it <= densify_until && it % config.densify_interval == 0)
            densify_and_prune(cloud, state, config, result.scene_extent, rng);
        if (it <= densify_until && it % config.opacity_reset_interval == 0)
            reset_opacity(cloud, state, config.opacity_reset_value);

        LossRecord rec{it, loss.l1, loss.dssim, loss.total, cloud.size(), elapsed()};
        state.history.push_back(rec);
        if (callbacks.progress) callbacks.progress(rec);
        if (callbacks.checkpoint && config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0)
            callbacks.checkpoint(it, cloud);
    }

    result.seconds = elapsed();
    return result;
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
    std::ostringstream out;
    out.precision(10);
    out << "iteration,l1,dssim,total,n_gaussians,elapsed_s\n";
    for (const auto& r : history)
        out << r.iteration << ',' << r.l1 << ',' << r.dssim << ',' << r.total << ',' << r.gaussians << ','
            << r.elapsed_s << '\n';
    return out.str();
}

} // namespace rsosplat
