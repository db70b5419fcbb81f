#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "tensorf/image.hpp"
#include "tensorf/metrics.hpp"

using namespace tensorf;

namespace {

ImageF constant_image(int w, int h, float r, float g, float b) {
    ImageF img = ImageF::zeros(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

ImageF random_image(int w, int h, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImageF img = ImageF::zeros(w, h);
    for (auto& v : img.rgb) v = u(rng);
    return img;
}

/// Direct transcription of the windowed structural-similarity definition:
/// non-separable 2-D Gaussian window, central moments computed explicitly.
double ssim_oracle(const ImageF& a, const ImageF& b) {
    const int win = 11;
    const double sigma = 1.5;
    std::vector<double> k2(static_cast<std::size_t>(win) * win);
    double ksum = 0;
    for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
            const double ux = dx - 5.0, uy = dy - 5.0;
            const double v = std::exp(-(ux * ux + uy * uy) / (2 * sigma * sigma));
            k2[static_cast<std::size_t>(dy) * win + dx] = v;
            ksum += v;
        }
    for (double& v : k2) v /= ksum;

    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0;
        int count = 0;
        for (int y = 0; y + win <= a.height; ++y)
            for (int x = 0; x + win <= a.width; ++x) {
                double mx = 0, my = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const double w = k2[static_cast<std::size_t>(dy) * win + dx];
                        mx += w * a.at(x + dx, y + dy, c);
                        my += w * b.at(x + dx, y + dy, c);
                    }
                double vx = 0, vy = 0, cov = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const double w = k2[static_cast<std::size_t>(dy) * win + dx];
                        const double da = a.at(x + dx, y + dy, c) - mx;
                        const double db = b.at(x + dx, y + dy, c) - my;
                        vx += w * da * da;
                        vy += w * db * db;
                        cov += w * da * db;
                    }
                acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        total += acc / count;
    }
    return total / 3.0;
}

}  // namespace

TEST_CASE("psnr closed forms") {
    SUBCASE("a uniform tenth-unit offset scores twenty decibels") {
        const auto a = constant_image(16, 12, 0.25f, 0.5f, 0.75f);
        auto b = a;
        for (auto& v : b.rgb) v += 0.1f;
        CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
        SUBCASE("and is symmetric") { CHECK(psnr(b, a) == doctest::Approx(psnr(a, b))); }
    }

    SUBCASE("identical images hit the cap") {
        const auto a = constant_image(16, 12, 0.3f, 0.4f, 0.5f);
        CHECK(psnr(a, a) == 99.0);
    }

    SUBCASE("vanishing error is clamped to the cap") {
        const auto a = constant_image(16, 12, 0.3f, 0.4f, 0.5f);
        auto b = a;
        b.rgb[0] += 1e-7f;
        CHECK(psnr(a, b) == 99.0);
    }

    SUBCASE("random images agree with direct recomputation") {
        std::mt19937_64 rng(90);
        const auto a = random_image(13, 9, rng);
        const auto b = random_image(13, 9, rng);
        double sq = 0;
        for (std::size_t i = 0; i < a.rgb.size(); ++i) {
            const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
            sq += d * d;
        }
        const double want = 10.0 * std::log10(static_cast<double>(a.rgb.size()) / sq);
        CHECK(psnr(a, b) == doctest::Approx(want).epsilon(1e-12));
    }

    SUBCASE("noisier candidates score lower") {
        std::mt19937_64 rng(91);
        const auto ref = random_image(20, 14, rng);
        double prev = 1e9;
        for (const float amp : {0.02f, 0.08f, 0.25f}) {
            auto noisy = ref;
            std::uniform_real_distribution<float> n(-amp, amp);
            for (auto& v : noisy.rgb) v = std::clamp(v + n(rng), 0.0f, 1.0f);
            const double score = psnr(ref, noisy);
            CHECK(score < prev);
            prev = score;
        }
    }

    SUBCASE("shape mismatches are rejected") {
        const auto a = constant_image(8, 8, 0, 0, 0);
        const auto b = constant_image(8, 9, 0, 0, 0);
        CHECK_THROWS_AS(psnr(a, b), std::invalid_argument);
        CHECK_THROWS_AS(psnr(ImageF{}, ImageF{}), std::invalid_argument);
    }
}

TEST_CASE("structural similarity closed forms") {
    SUBCASE("identical images score one") {
        std::mt19937_64 rng(92);
        const auto a = random_image(15, 13, rng);
        CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("two constants reduce to the luminance term") {
        const auto a = constant_image(16, 14, 0.4f, 0.4f, 0.4f);
        const auto b = constant_image(16, 14, 0.6f, 0.6f, 0.6f);
        const double x = static_cast<double>(0.4f), y = static_cast<double>(0.6f);
        const double want = (2 * x * y + 1e-4) / (x * x + y * y + 1e-4);
        CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
    }

    SUBCASE("a small uniform shift barely dents the score") {
        const auto a = constant_image(16, 14, 0.5f, 0.5f, 0.5f);
        const auto b = constant_image(16, 14, 0.51f, 0.51f, 0.51f);
        const double x = static_cast<double>(0.5f), y = static_cast<double>(0.51f);
        const double want = (2 * x * y + 1e-4) / (x * x + y * y + 1e-4);
        CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
        CHECK(ssim(a, b) > 0.999);
    }

    SUBCASE("random pairs match an independent two-dimensional oracle") {
        std::mt19937_64 rng(93);
        const auto a = random_image(33, 17, rng);
        auto b = a;
        std::uniform_real_distribution<float> n(-0.2f, 0.2f);
        for (auto& v : b.rgb) v = std::clamp(v + n(rng), 0.0f, 1.0f);
        CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-7));
        CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
        CHECK(ssim(a, b) < 1.0);
    }

    SUBCASE("degradation is monotone in noise amplitude") {
        std::mt19937_64 rng(94);
        const auto ref = random_image(24, 18, rng);
        double prev = 2.0;
        for (const float amp : {0.05f, 0.15f, 0.4f}) {
            auto noisy = ref;
            std::uniform_real_distribution<float> n(-amp, amp);
            for (auto& v : noisy.rgb) v = std::clamp(v + n(rng), 0.0f, 1.0f);
            const double score = ssim(ref, noisy);
            CHECK(score < prev);
            prev = score;
        }
    }

    SUBCASE("images below the window size are rejected") {
        const auto a = constant_image(10, 12, 0.5f, 0.5f, 0.5f);
        CHECK_THROWS_AS(ssim(a, a), std::invalid_argument);
        const auto c = constant_image(12, 10, 0.5f, 0.5f, 0.5f);
        CHECK_THROWS_AS(ssim(c, c), std::invalid_argument);
        const auto d = constant_image(11, 11, 0.5f, 0.5f, 0.5f);
        CHECK_NOTHROW(ssim(d, d));
    }

    SUBCASE("shape mismatches are rejected") {
        const auto a = constant_image(16, 14, 0.5f, 0.5f, 0.5f);
        const auto b = constant_image(14, 16, 0.5f, 0.5f, 0.5f);
        CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
    }
}
