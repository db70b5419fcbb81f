#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tensorf/image.hpp"

namespace tensorf {

inline constexpr double kPsnrCap = 99.0;

/// Peak signal-to-noise ratio in dB for images with values in [0, 1].
/// Identical images return the cap instead of infinity.
inline double psnr(const ImageF& reference, const ImageF& candidate) {
    if (reference.width != candidate.width || reference.height != candidate.height)
        throw std::invalid_argument("psnr: image shapes differ");
    if (reference.rgb.empty()) throw std::invalid_argument("psnr: empty image");
    double sq = 0.0;
    for (std::size_t i = 0; i < reference.rgb.size(); ++i) {
        const double d = static_cast<double>(reference.rgb[i]) - candidate.rgb[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(reference.rgb.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline constexpr int kSsimWindow = 11;

inline std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - (kSsimWindow - 1) / 2.0;
        k[static_cast<std::size_t>(i)] = std::exp(-(x * x) / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Separable Gaussian filter over the valid region (no padding).
/// Input is H×W, output is (H-10)×(W-10).
inline std::vector<double> ssim_filter(const std::vector<double>& img, int width, int height) {
    const auto k = ssim_kernel();
    const int vw = width - kSsimWindow + 1;
    const int vh = height - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(height) * vw);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i)
                acc += k[static_cast<std::size_t>(i)] *
                       img[static_cast<std::size_t>(y) * width + x + i];
            rows[static_cast<std::size_t>(y) * vw + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(vh) * vw);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i)
                acc += k[static_cast<std::size_t>(i)] *
                       rows[static_cast<std::size_t>(y + i) * vw + x];
            out[static_cast<std::size_t>(y) * vw + x] = acc;
        }
    return out;
}

}  // namespace detail

/// Mean structural similarity over the valid region, per channel then averaged.
/// Gaussian window 11x11 with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.
inline double ssim(const ImageF& reference, const ImageF& candidate) {
    if (reference.width != candidate.width || reference.height != candidate.height)
        throw std::invalid_argument("ssim: image shapes differ");
    if (reference.width < detail::kSsimWindow || reference.height < detail::kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than 11x11 window");

    const int w = reference.width;
    const int h = reference.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    const double c1 = 0.01 * 0.01;
    const double c2 = 0.03 * 0.03;

    double total = 0.0;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            const double a = reference.rgb[i * 3 + c];
            const double b = candidate.rgb[i * 3 + c];
            x[i] = a;
            y[i] = b;
            xx[i] = a * a;
            yy[i] = b * b;
            xy[i] = a * b;
        }
        const auto mx = detail::ssim_filter(x, w, h);
        const auto my = detail::ssim_filter(y, w, h);
        const auto mxx = detail::ssim_filter(xx, w, h);
        const auto myy = detail::ssim_filter(yy, w, h);
        const auto mxy = detail::ssim_filter(xy, w, h);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = mxx[i] - mx[i] * mx[i];
            const double vy = myy[i] - my[i] * my[i];
            const double cov = mxy[i] - mx[i] * my[i];
            const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
            const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            acc += num / den;
        }
        total += acc / static_cast<double>(mx.size());
    }
    return total / 3.0;
}

}  // namespace tensorf
