#include "rsosplat/metrics.hpp"

#include "rsosplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace rsosplat {

namespace {

void require_same_size(const ImageRGB& a, const ImageRGB& b) {
    if (!a.same_size(b))
        throw Error("DimensionMismatch", "images differ in size: " + std::to_string(a.width) + "x" +
                                             std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                             std::to_string(b.height));
}

/// Single-channel plane.
struct Plane {
    int width = 0, height = 0;
    std::vector<double> v;

    Plane() = default;
    Plane(int w, int h, double fill = 0.0) : width(w), height(h), v(static_cast<std::size_t>(w) * h, fill) {}
    double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

Plane channel(const ImageRGB& img, int c) {
    Plane p(img.width, img.height);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) p.v[i] = img.pixels[i * 3 + c];
    return p;
}

/// Valid-mode separable correlation: out is (w - k + 1) x (h - k + 1).
Plane filter_valid(const Plane& in, const std::vector<double>& w) {
    const int k = static_cast<int>(w.size());
    const int ow = in.width - k + 1, oh = in.height - k + 1;
    Plane tmp(ow, in.height);
    for (int y = 0; y < in.height; ++y) {
        double* dst = &tmp(0, y);
        const double* src = &in.v[static_cast<std::size_t>(y) * in.width];
        for (int j = 0; j < k; ++j) {
            const double wj = w[j];
            for (int x = 0; x < ow; ++x) dst[x] += wj * src[x + j];
        }
    }
    Plane out(ow, oh);
    for (int y = 0; y < oh; ++y) {
        double* dst = &out(0, y);
        for (int j = 0; j < k; ++j) {
            const double wj = w[j];
            const double* src = &tmp.v[static_cast<std::size_t>(y + j) * ow];
            for (int x = 0; x < ow; ++x) dst[x] += wj * src[x];
        }
    }
    return out;
}

/// Adjoint of filter_valid: the full-mode correlation of g with the reversed
/// window, computed as a valid correlation over a zero-padded copy.
Plane filter_valid_adjoint(const Plane& g, const std::vector<double>& w) {
    const int k = static_cast<int>(w.size());
    Plane padded(g.width + 2 * (k - 1), g.height + 2 * (k - 1));
    for (int y = 0; y < g.height; ++y)
        std::copy_n(&g.v[static_cast<std::size_t>(y) * g.width], g.width, &padded(k - 1, y + k - 1));
    return filter_valid(padded, std::vector<double>(w.rbegin(), w.rend()));
}

Plane product(const Plane& a, const Plane& b) {
    Plane out(a.width, a.height);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

struct ChannelSsim {
    double mean = 0;
    Plane gradient;  // d mean / d a, full size
};

ChannelSsim channel_ssim(const Plane& a, const Plane& b, const std::vector<double>& w, const SsimParams& p,
                         bool want_gradient) {
    const double c1 = (p.k1 * 1.0) * (p.k1 * 1.0);
    const double c2 = (p.k2 * 1.0) * (p.k2 * 1.0);
    const Plane mu_a = filter_valid(a, w);
    const Plane mu_b = filter_valid(b, w);
    const Plane e_aa = filter_valid(product(a, a), w);
    const Plane e_bb = filter_valid(product(b, b), w);
    const Plane e_ab = filter_valid(product(a, b), w);

    const std::size_t n = mu_a.v.size();
    ChannelSsim out;
    Plane d_mu, d_aa, d_ab;
    if (want_gradient) {
        d_mu = Plane(mu_a.width, mu_a.height);
        d_aa = Plane(mu_a.width, mu_a.height);
        d_ab = Plane(mu_a.width, mu_a.height);
    }
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ma = mu_a.v[i], mb = mu_b.v[i];
        const double a1 = 2 * (ma * mb) + c1;
        const double a2 = 2 * (e_ab.v[i] - ma * mb) + c2;
        const double b1 = (ma * ma + mb * mb) + c1;
        const double b2 = (e_aa.v[i] - ma * ma) + (e_bb.v[i] - mb * mb) + c2;
        const double s = (a1 * a2) / (b1 * b2);
        sum += s;
        if (want_gradient) {
            const double inv = 1.0 / (b1 * b2);
            d_mu.v[i] = (2 * mb * a2 - 2 * mb * a1) * inv - s * (2 * ma / b1 - 2 * ma / b2);
            d_aa.v[i] = -s / b2;
            d_ab.v[i] = 2 * a1 * inv;
        }
    }
    out.mean = sum / static_cast<double>(n);
    if (want_gradient) {
        const double scale = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            d_mu.v[i] *= scale;
            d_aa.v[i] *= scale;
            d_ab.v[i] *= scale;
        }
        const Plane g_mu = filter_valid_adjoint(d_mu, w);
        const Plane g_aa = filter_valid_adjoint(d_aa, w);
        const Plane g_ab = filter_valid_adjoint(d_ab, w);
        out.gradient = Plane(a.width, a.height);
        for (std::size_t i = 0; i < a.v.size(); ++i)
            out.gradient.v[i] = g_mu.v[i] + 2 * a.v[i] * g_aa.v[i] + b.v[i] * g_ab.v[i];
    }
    return out;
}

SsimWithGradient ssim_impl(const ImageRGB& a, const ImageRGB& b, const SsimParams& params, bool want_gradient) {
    require_same_size(a, b);
    if (std::min(a.width, a.height) < params.window)
        throw Error("TooSmall", "SSIM needs both dimensions >= " + std::to_string(params.window));
    const auto w = gaussian_window(params.window, params.sigma);
    SsimWithGradient out;
    if (want_gradient) out.gradient = ImageRGB(a.width, a.height);
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        const ChannelSsim cs = channel_ssim(channel(a, c), channel(b, c), w, params, want_gradient);
        total += cs.mean;
        if (want_gradient)
            for (std::size_t i = 0; i < a.pixel_count(); ++i) out.gradient.pixels[i * 3 + c] = cs.gradient.v[i] / 3.0;
    }
    out.value = total / 3.0;
    return out;
}

} // namespace

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const double center = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) w[i] = std::exp(-(i - center) * (i - center) / (2 * sigma * sigma));
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= sum;
    return w;
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
    require_same_size(a, b);
    double sse = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageRGB& a, const ImageRGB& b, const SsimParams& params) {
    return ssim_impl(a, b, params, false).value;
}

SsimWithGradient ssim_with_gradient(const ImageRGB& a, const ImageRGB& b, const SsimParams& params) {
    return ssim_impl(a, b, params, true);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

void QualityScores::finalize() {
    const double n = static_cast<double>(ssim.size());
    mean_ssim = n > 0 ? std::accumulate(ssim.begin(), ssim.end(), 0.0) / n : 0.0;
    mean_psnr = n > 0 ? std::accumulate(psnr.begin(), psnr.end(), 0.0) / n : 0.0;
}

nlohmann::json QualityScores::to_json() const {
    nlohmann::json per_view = nlohmann::json::array();
    for (std::size_t i = 0; i < ssim.size(); ++i)
        per_view.push_back({{"view", i < views.size() ? views[i] : std::to_string(i)}, {"ssim", ssim[i]}, {"psnr", psnr[i]}});
    return {{"mean_ssim", mean_ssim}, {"mean_psnr", mean_psnr}, {"lpips", nullptr}, {"views", per_view}};
}

std::string QualityScores::to_csv() const {
    std::ostringstream out;
    out << "view,ssim,psnr\n" << std::setprecision(10);
    for (std::size_t i = 0; i < ssim.size(); ++i)
        out << (i < views.size() ? views[i] : std::to_string(i)) << ',' << ssim[i] << ',' << psnr[i] << '\n';
    return out.str();
}

QualityScores evaluate(const GaussianCloud& cloud, const SfmBundle& bundle, std::span<const std::size_t> views,
                       const Eigen::Vector3d& background, const RasterConfig& config) {
    if (views.empty()) throw Error("EmptyTestSet", "evaluation needs at least one test view");
    QualityScores scores;
    for (std::size_t idx : views) {
        const PosedView& view = bundle.views.at(idx);
        if (!view.image) throw Error("MissingImage", "test view '" + view.name + "' has no ground truth");
        const RenderedView r = render(cloud, bundle.camera_for(view), background, config);
        scores.views.push_back(view.name);
        scores.ssim.push_back(ssim(r.image, *view.image));
        scores.psnr.push_back(psnr(r.image, *view.image));
    }
    scores.finalize();
    return scores;
}

} // namespace rsosplat
