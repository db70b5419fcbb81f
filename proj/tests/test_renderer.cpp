#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tensorf/camera.hpp"
#include "tensorf/model.hpp"
#include "tensorf/renderer.hpp"

using namespace tensorf;

namespace {

Vec3d random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3d v{n(rng), n(rng), n(rng)};
    return v.normalized();
}

// Membership bisection along the ray: refines each crossing of the box
// boundary independently of the slab method.
std::pair<double, double> bisect_span(const Rayd& ray, const BBoxd& box, double t_max) {
    auto inside = [&](double t) { return box.contains(ray.origin + ray.direction * t); };
    const int coarse = 20000;
    double enter = -1, exit = -1;
    bool prev = inside(0.0);
    if (prev) enter = 0.0;
    for (int i = 1; i <= coarse; ++i) {
        const double t = t_max * i / coarse;
        const bool cur = inside(t);
        if (cur != prev) {
            double lo = t_max * (i - 1) / coarse, hi = t;
            for (int b = 0; b < 60; ++b) {
                const double mid = 0.5 * (lo + hi);
                if (inside(mid) == prev)
                    lo = mid;
                else
                    hi = mid;
            }
            if (!prev)
                enter = 0.5 * (lo + hi);
            else {
                exit = 0.5 * (lo + hi);
                break;
            }
            prev = cur;
        }
    }
    if (enter >= 0 && exit < 0 && inside(t_max)) exit = t_max;
    return {enter, exit};
}

}  // namespace

TEST_CASE("camera matrix inverse round-trips") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int t = 0; t < 10; ++t) {
        Mat4 m = Mat4::identity();
        // Random rotation from normalized cross products plus a translation.
        const Vec3d a = random_unit(rng);
        Vec3d b = random_unit(rng);
        b = (b - a * a.dot(b)).normalized();
        const Vec3d c{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
        const Vec3d axes[3] = {a, b, c};
        for (int col = 0; col < 3; ++col)
            for (int row = 0; row < 3; ++row) m.at(row, col) = axes[col][row];
        for (int row = 0; row < 3; ++row) m.at(row, 3) = dist(rng) * 4.0;

        const Mat4 inv = m.inverse();
        const Mat4 prod = m * inv;
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col)
                CHECK(std::abs(prod.at(r, col) - (r == col ? 1.0 : 0.0)) < 1e-6);
    }
}

TEST_CASE("generate_ray sends the center pixel along the view axis") {
    Camera cam;
    cam.width = 200;
    cam.height = 200;
    cam.focal = 150.0;
    cam.pose = Mat4::identity();
    const Rayd ray = generate_ray(cam, 99.5, 99.5);
    CHECK(ray.direction.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ray.direction.y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ray.direction.z == doctest::Approx(-1.0));
}

TEST_CASE("generate_ray corner pixel with focal = width/2") {
    Camera cam;
    cam.width = 4;
    cam.height = 4;
    cam.focal = 2.0;
    cam.pose = Mat4::identity();
    // Pixel (0,0): offsets ((0.5-2)/2, -(0.5-2)/2, -1) = (-0.75, 0.75, -1).
    const Rayd ray = generate_ray(cam, 0, 0);
    const Vec3d want = Vec3d{-0.75, 0.75, -1.0}.normalized();
    CHECK(ray.direction.x == doctest::Approx(want.x));
    CHECK(ray.direction.y == doctest::Approx(want.y));
    CHECK(ray.direction.z == doctest::Approx(want.z));
    CHECK_THROWS_AS(generate_ray(cam, 4, 0), std::out_of_range);
}

TEST_CASE("projection round-trips through generate_ray") {
    Camera cam;
    cam.width = 320;
    cam.height = 240;
    cam.focal = 260.0;
    std::mt19937_64 rng(42);
    // A tilted pose built from a normalized look direction.
    cam.pose = Mat4::identity();
    cam.pose.at(0, 3) = 0.4;
    cam.pose.at(1, 3) = -0.2;
    cam.pose.at(2, 3) = 1.0;

    std::uniform_real_distribution<double> px(0.0, 319.0), py(0.0, 239.0);
    for (int t = 0; t < 10; ++t) {
        const double ux = px(rng), uy = py(rng);
        const Rayd ray = generate_ray(cam, ux, uy);
        const Vec3d world = ray.origin + ray.direction * 1.0;
        double qx, qy;
        project_point(cam, world, qx, qy);
        CHECK(qx == doctest::Approx(ux).epsilon(1e-9));
        CHECK(qy == doctest::Approx(uy).epsilon(1e-9));
    }
}

TEST_CASE("clip_ray axis case and parallel miss") {
    const BBoxd box{{-1, -1, -1}, {1, 1, 1}};
    SUBCASE("straight through the center") {
        const Rayd ray{{-2, 0, 0}, {1, 0, 0}, 0, 1e30};
        const auto span = clip_ray(ray, box);
        REQUIRE(span.has_value());
        CHECK(span->first == doctest::Approx(1.0));
        CHECK(span->second == doctest::Approx(3.0));
    }
    SUBCASE("parallel to a face, outside") {
        const Rayd ray{{-2, 2, 0}, {1, 0, 0}, 0, 1e30};
        CHECK_FALSE(clip_ray(ray, box).has_value());
    }
    SUBCASE("origin inside starts at the epsilon floor") {
        const Rayd ray{{0, 0, 0}, {0, 0, -1}, 0, 1e30};
        const auto span = clip_ray(ray, box);
        REQUIRE(span.has_value());
        CHECK(span->first <= 1e-6);
        CHECK(span->second == doctest::Approx(1.0));
    }
}

TEST_CASE("clip_ray agrees with the bisection oracle on 1000 random rays") {
    const BBoxd box{{-0.8, -1.2, -0.5}, {1.1, 0.7, 1.4}};
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> pos(-3.0, 3.0);
    const double t_max = 20.0;
    int hits = 0;
    for (int t = 0; t < 1000; ++t) {
        const Rayd ray{{pos(rng), pos(rng), pos(rng)}, random_unit(rng), 0, 1e30};
        const auto span = clip_ray(ray, box);
        const auto oracle = bisect_span(ray, box, t_max);
        if (!span) {
            const bool oracle_miss = oracle.first < 0 || oracle.second < 0 ||
                                     oracle.second - oracle.first < 1e-9;
            CHECK(oracle_miss);
            continue;
        }
        if (span->second > t_max) continue;  // oracle scan range exceeded
        ++hits;
        // clip_ray floors the entry distance at 1e-6 for rays starting inside.
        if (oracle.first >= 0)
            CHECK(std::abs(span->first - std::max(oracle.first, 1e-6)) < 1e-6);
        if (oracle.second >= 0) CHECK(std::abs(span->second - oracle.second) < 1e-6);
    }
    CHECK(hits > 50);
}

TEST_CASE("sample_points spacing, jitter, and occupancy dropping") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {4, 4, 4}};
    SUBCASE("quarter steps yield four samples in eval mode") {
        Rayd ray{{-2, 0, 0}, {1, 0, 0}, 1.0, 3.0};
        RenderSteps<double> steps;
        sample_points(ray, (3.0 - 1.0) / 4.0, nullptr, 0.0, steps);
        CHECK(steps.count() == 4);
        CHECK(steps.ts[0] == doctest::Approx(1.0));
        CHECK(steps.deltas[3] == doctest::Approx(0.5));
    }
    SUBCASE("all-empty occupancy drops everything") {
        OccupancyVolume occ;
        occ.bbox = g.bbox;
        occ.resolution = {4, 4, 4};
        occ.bits.assign(64, 0);
        Rayd ray{{-2, 0, 0}, {1, 0, 0}, 1.0, 3.0};
        RenderSteps<double> steps;
        sample_points(ray, 0.1, &occ, 0.0, steps);
        CHECK(steps.count() == 0);
    }
    SUBCASE("retained samples are exactly the occupied ones") {
        OccupancyVolume occ;
        occ.bbox = g.bbox;
        occ.resolution = {4, 4, 4};
        occ.bits.assign(64, 0);
        std::mt19937_64 rng(44);
        std::bernoulli_distribution flip(0.5);
        for (auto& b : occ.bits) b = flip(rng);
        Rayd ray{{-2, 0.1, -0.2}, {1, 0, 0}, 0, 1e30};
        const auto span = clip_ray(ray, g.bbox);
        REQUIRE(span.has_value());
        ray.t_near = span->first;
        ray.t_far = span->second;
        RenderSteps<double> steps;
        sample_points(ray, 0.07, &occ, 0.3, steps);
        CHECK(steps.count() > 0);
        int walked = 0;
        for (double t = ray.t_near + 0.3 * 0.07; t < ray.t_far; t += 0.07) {
            const Vec3d p = ray.origin + ray.direction * t;
            if (occ.occupied(p)) {
                REQUIRE(walked < steps.count());
                CHECK(steps.ts[walked] == doctest::Approx(t));
                ++walked;
            }
        }
        CHECK(walked == steps.count());
    }
}

TEST_CASE("composite closed forms") {
    SUBCASE("single opaque-ish sample over black") {
        RenderSteps<double> steps;
        steps.ts = {1.0};
        steps.positions = {{0, 0, 0}};
        steps.deltas = {1.0};
        steps.sigmas = {1.0};
        steps.colors = {{1, 0, 0}};
        const auto res = composite(steps, Vec3d{0, 0, 0});
        CHECK(res.rgb.x == doctest::Approx(1.0 - std::exp(-1.0)));
        CHECK(res.rgb.y == doctest::Approx(0.0));
        CHECK(res.residual_tau == doctest::Approx(std::exp(-1.0)));
    }
    SUBCASE("zero density returns the background") {
        RenderSteps<double> steps;
        steps.ts = {0.5, 1.0, 1.5};
        steps.positions.assign(3, {0, 0, 0});
        steps.deltas.assign(3, 0.5);
        steps.sigmas.assign(3, 0.0);
        steps.colors.assign(3, {0.2, 0.3, 0.4});
        const auto res = composite(steps, Vec3d{0.9, 0.8, 0.7});
        CHECK(res.rgb.x == doctest::Approx(0.9));
        CHECK(res.rgb.y == doctest::Approx(0.8));
        CHECK(res.rgb.z == doctest::Approx(0.7));
    }
}

TEST_CASE("composite matches a sequential alpha-compositing oracle") {
    std::mt19937_64 rng(45);
    std::uniform_real_distribution<double> sig(0.0, 3.0), col(0.0, 1.0), del(0.01, 0.5);
    for (int t = 0; t < 50; ++t) {
        RenderSteps<double> steps;
        const int q_count = 3;
        for (int q = 0; q < q_count; ++q) {
            steps.ts.push_back(0.1 * (q + 1));
            steps.positions.push_back({0, 0, 0});
            steps.deltas.push_back(del(rng));
            steps.sigmas.push_back(sig(rng));
            steps.colors.push_back({col(rng), col(rng), col(rng)});
        }
        const Vec3d bg{col(rng), col(rng), col(rng)};
        const auto res = composite(steps, bg);

        Vec3d acc{0, 0, 0};
        double trans = 1.0;
        for (int q = 0; q < q_count; ++q) {
            const double alpha = 1.0 - std::exp(-steps.sigmas[q] * steps.deltas[q]);
            acc += steps.colors[q] * (trans * alpha);
            trans *= 1.0 - alpha;
        }
        acc += bg * trans;
        CHECK(std::abs(res.rgb.x - acc.x) < 1e-12);
        CHECK(std::abs(res.rgb.y - acc.y) < 1e-12);
        CHECK(std::abs(res.rgb.z - acc.z) < 1e-12);
        CHECK(std::abs(res.residual_tau - trans) < 1e-12);
    }
}

TEST_CASE("weights sum with residual transmittance to one") {
    std::mt19937_64 rng(46);
    std::uniform_real_distribution<double> sig(0.0, 5.0), del(0.001, 0.3);
    for (int t = 0; t < 100; ++t) {
        RenderSteps<double> steps;
        const int q_count = 1 + int(rng() % 64);
        for (int q = 0; q < q_count; ++q) {
            steps.ts.push_back(0.05 * (q + 1));
            steps.positions.push_back({0, 0, 0});
            steps.deltas.push_back(del(rng));
            steps.sigmas.push_back(sig(rng));
            steps.colors.push_back({0.5, 0.5, 0.5});
        }
        std::vector<double> weights(q_count, 0.0);
        const auto res = composite(steps, Vec3d{0, 0, 0}, 0.0, weights.data());
        double sum = res.residual_tau;
        for (double w : weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("rendering is invariant to splitting a step in half") {
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> sig(0.0, 4.0), col(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        RenderSteps<double> a, b;
        const int q_count = 5;
        for (int q = 0; q < q_count; ++q) {
            const double s = sig(rng);
            const Vec3d c{col(rng), col(rng), col(rng)};
            const double delta = 0.2;
            const double t0 = 0.2 * q;
            a.ts.push_back(t0);
            a.positions.push_back({0, 0, 0});
            a.deltas.push_back(delta);
            a.sigmas.push_back(s);
            a.colors.push_back(c);
            for (int half = 0; half < 2; ++half) {
                b.ts.push_back(t0 + half * delta / 2);
                b.positions.push_back({0, 0, 0});
                b.deltas.push_back(delta / 2);
                b.sigmas.push_back(s);
                b.colors.push_back(c);
            }
        }
        const auto ra = composite(a, Vec3d{0.3, 0.6, 0.9});
        const auto rb = composite(b, Vec3d{0.3, 0.6, 0.9});
        CHECK(std::abs(ra.rgb.x - rb.rgb.x) < 1e-12);
        CHECK(std::abs(ra.rgb.y - rb.rgb.y) < 1e-12);
        CHECK(std::abs(ra.rgb.z - rb.rgb.z) < 1e-12);
        CHECK(std::abs(ra.residual_tau - rb.residual_tau) < 1e-12);
    }
}

TEST_CASE("nominal_step_size tracks voxel spacing and the sample cap") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {64, 64, 64}};
    const double step = nominal_step_size(g);
    const double diag = g.bbox.diagonal();
    // Diagonal spans 63*sqrt(3) voxel lengths; half-voxel steps.
    const double want = diag / std::ceil(63.0 * std::sqrt(3.0) / 0.5);
    CHECK(step == doctest::Approx(want));
    const double capped = nominal_step_size(g, 16);
    CHECK(capped == doctest::Approx(diag / 16.0));
}

TEST_CASE("update_occupancy marks density support and dilates by one cell") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {16, 16, 16}};
    std::mt19937_64 rng(48);
    SUBCASE("zero raw density with a deep shift is empty") {
        auto f = random_density_field<float>(FieldMode::VM, g, {2, 2, 2}, rng, 0.0);
        const auto occ = update_occupancy(f, Vec3i{16, 16, 16}, 1e-4, 0.05, -10.0f);
        CHECK_FALSE(occ.any_occupied());
    }
    SUBCASE("uniform high density marks everything") {
        std::array<std::vector<VmComponent<float>>, 3> per_type;
        per_type[0].push_back(
            {std::vector<float>(16, 10.0f), std::vector<float>(256, 1.0f)});
        auto f = make_vm_density<float>(g, per_type);
        const auto occ = update_occupancy(f, Vec3i{16, 16, 16}, 1e-4, 0.05, 0.0f);
        CHECK(occ.occupied_count() == 16u * 16 * 16);
    }
}

TEST_CASE("tight_bbox shapes") {
    OccupancyVolume occ;
    occ.bbox = {{-1, -1, -1}, {1, 1, 1}};
    occ.resolution = {8, 8, 8};
    occ.bits.assign(512, 0);
    SUBCASE("single occupied cell pads by one cell") {
        occ.bits[occ.cell_index(4, 4, 4)] = 1;
        const BBoxd tight = tight_bbox(occ);
        const double cell = 2.0 / 8.0;
        CHECK(tight.min.x == doctest::Approx(-1.0 + 3 * cell));
        CHECK(tight.max.x == doctest::Approx(-1.0 + 6 * cell));
    }
    SUBCASE("full occupancy returns the original bbox") {
        occ.bits.assign(512, 1);
        const BBoxd tight = tight_bbox(occ);
        CHECK(tight.min.x == doctest::Approx(-1.0));
        CHECK(tight.max.z == doctest::Approx(1.0));
    }
    SUBCASE("empty occupancy is an error") {
        occ.bits.assign(512, 0);
        CHECK_THROWS(tight_bbox(occ));
    }
    SUBCASE("random occupancy matches an exhaustive scan") {
        std::mt19937_64 rng(49);
        std::bernoulli_distribution flip(0.1);
        for (auto& b : occ.bits) b = flip(rng);
        occ.bits[occ.cell_index(2, 3, 5)] = 1;
        int lo[3] = {8, 8, 8}, hi[3] = {-1, -1, -1};
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                for (int k = 0; k < 8; ++k)
                    if (occ.bits[occ.cell_index(i, j, k)]) {
                        const int idx[3] = {i, j, k};
                        for (int a = 0; a < 3; ++a) {
                            lo[a] = std::min(lo[a], idx[a]);
                            hi[a] = std::max(hi[a], idx[a]);
                        }
                    }
        const BBoxd tight = tight_bbox(occ);
        const double cell = 2.0 / 8.0;
        for (int a = 0; a < 3; ++a) {
            const double want_lo = std::max(-1.0, -1.0 + (lo[a] - 1) * cell);
            const double want_hi = std::min(1.0, -1.0 + (hi[a] + 2) * cell);
            CHECK(tight.min[a] == doctest::Approx(want_lo));
            CHECK(tight.max[a] == doctest::Approx(want_hi));
        }
    }
}

TEST_CASE("occupancy_resolution caps at 128 per axis") {
    CHECK(occupancy_resolution(Vec3i{64, 300, 128}) == Vec3i{64, 128, 128});
}

TEST_CASE("render_pixel of a zero-density model is the background") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {8, 8, 8}};
    std::mt19937_64 rng(50);
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {2, 2, 2}, rng, 0.0);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {2, 2, 2}, 27, rng);
    model.decoder_kind = DecoderKind::Sh;
    // A deep shift drives the activated density to ~1e-13 so the background
    // survives to near machine precision.
    model.density_shift = -30.0;

    RenderOptions<double> opts;
    opts.step_size = 0.05;
    opts.background = {0.25, 0.5, 0.75};
    opts.density_shift = -30.0;
    RenderScratch<double> scratch;
    MlpWorkspace<double> mws;
    const Rayd ray{{-2, 0.1, 0.2}, Vec3d{1, 0.05, -0.1}.normalized(), 0, 1e30};
    const auto res = render_pixel(
        model.density, model.appearance,
        [&](const double* f, const Vec3d& d) { return model.decode(f, d, mws); }, ray, opts,
        nullptr, 0.0, scratch);
    CHECK(res.rgb.x == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(res.rgb.y == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(res.rgb.z == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("render_pixel reproduces a single opaque slab color") {
    // A nearly opaque unit-extent region of constant color along the ray.
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {2, 2, 2}};
    std::array<std::vector<VmComponent<double>>, 3> per_type;
    per_type[0].push_back(
        {std::vector<double>(2, 60.0), std::vector<double>(4, 1.0)});
    Model<double> model;
    model.density = make_vm_density<double>(g, per_type);
    // Appearance: constant stacked value 1 with B mapping to DC coefficients.
    AppearanceField<double> app;
    app.spatial = model.density;
    for (auto& v : app.spatial.vectors) std::fill(v.values.begin(), v.values.end(), 1.0);
    for (auto& m : app.spatial.matrices) std::fill(m.values.begin(), m.values.end(), 1.0);
    app.feature_count = 27;
    app.B.assign(27u * app.spatial.total_components(), 0.0);
    // Drive DC hard positive for red, hard negative for green/blue.
    app.B[0] = 12.0;
    app.B[1 * app.spatial.total_components()] = -12.0;
    app.B[2 * app.spatial.total_components()] = -12.0;
    model.appearance = app;
    model.decoder_kind = DecoderKind::Sh;
    model.density_shift = 0.0;

    RenderOptions<double> opts;
    opts.step_size = 0.01;
    opts.background = {0, 0, 0};
    opts.density_shift = 0.0;
    opts.termination_tau = 0.0;
    RenderScratch<double> scratch;
    MlpWorkspace<double> mws;
    const Rayd ray{{-3, 0, 0}, {1, 0, 0}, 0, 1e30};
    const auto res = render_pixel(
        model.density, model.appearance,
        [&](const double* f, const Vec3d& d) { return model.decode(f, d, mws); }, ray, opts,
        nullptr, 0.0, scratch);
    // One stacked component of value 1, so the DC feature is exactly +-12.
    const double want_hi = logistic(12.0 * 0.28209479177387814);
    const double want_lo = logistic(-12.0 * 0.28209479177387814);
    CHECK(res.rgb.x == doctest::Approx(want_hi).epsilon(1e-3));
    CHECK(res.rgb.y == doctest::Approx(want_lo).epsilon(1e-3));
    CHECK(res.rgb.z == doctest::Approx(want_lo).epsilon(1e-3));
    CHECK(res.residual_tau < 1e-12);
}

TEST_CASE("render_pixel agrees with a no-skip reference path") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {6, 6, 6}};
    std::mt19937_64 rng(51);
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {3, 3, 3}, rng, 0.4);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {3, 3, 3}, 27, rng, 0.3);
    model.decoder_kind = DecoderKind::Sh;
    model.density_shift = 0.0;

    // Occupancy from the field plus skip heuristics on.
    const auto occ = update_occupancy(model.density, Vec3i{6, 6, 6}, 1e-4, 0.05, 0.0);
    RenderOptions<double> fast;
    fast.step_size = 0.05;
    fast.background = {1, 1, 1};
    fast.density_shift = 0.0;
    fast.alpha_cutoff = 1e-4;
    fast.termination_tau = 1e-4;
    RenderOptions<double> ref = fast;
    ref.alpha_cutoff = 0.0;
    ref.termination_tau = 0.0;

    RenderScratch<double> scratch;
    MlpWorkspace<double> mws;
    std::uniform_real_distribution<double> pos(-2.5, 2.5);
    auto decode = [&](const double* f, const Vec3d& d) { return model.decode(f, d, mws); };
    for (int t = 0; t < 100; ++t) {
        Vec3d origin{pos(rng), pos(rng), pos(rng)};
        while (g.bbox.contains(origin)) origin.x += 3.0;
        const Rayd ray{origin, (Vec3d{pos(rng), pos(rng), pos(rng)} * 0.2 - origin).normalized(),
                       0, 1e30};
        const auto a = render_pixel(model.density, model.appearance, decode, ray, fast, &occ, 0.0,
                                    scratch);
        const auto b = render_pixel(model.density, model.appearance, decode, ray, ref, nullptr,
                                    0.0, scratch);
        CHECK(std::abs(a.rgb.x - b.rgb.x) < 1e-4);
        CHECK(std::abs(a.rgb.y - b.rgb.y) < 1e-4);
        CHECK(std::abs(a.rgb.z - b.rgb.z) < 1e-4);
    }
}

TEST_CASE("masked and unmasked renders of a sphere field agree") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {24, 24, 24}};
    // Rank-1 separable bump approximating a centered blob.
    auto bump = [](int n, double scale) {
        std::vector<double> v(n);
        for (int i = 0; i < n; ++i) {
            const double u = -1.0 + 2.0 * i / (n - 1);
            v[i] = scale * std::exp(-8.0 * u * u);
        }
        return v;
    };
    std::vector<std::array<std::vector<double>, 3>> triples;
    triples.push_back({bump(24, 40.0), bump(24, 1.0), bump(24, 1.0)});
    Model<double> model;
    model.density = make_cp_density<double>(g, triples);
    std::mt19937_64 rng(52);
    model.appearance = random_appearance_field<double>(FieldMode::CP, g, {2, 2, 2}, 27, rng, 0.3);
    model.decoder_kind = DecoderKind::Sh;
    // Shifted activation keeps the raw-zero exterior effectively empty so the
    // occupancy mask has something to drop.
    model.density_shift = -10.0;

    const double step = nominal_step_size(g);
    const auto occ = update_occupancy(model.density, Vec3i{24, 24, 24}, 1e-4, step, -10.0);
    CHECK(occ.any_occupied());
    CHECK(occ.occupied_count() < 24u * 24 * 24);

    RenderOptions<double> opts;
    opts.step_size = step;
    opts.background = {1, 1, 1};
    opts.density_shift = -10.0;
    opts.alpha_cutoff = 0.0;
    opts.termination_tau = 0.0;
    RenderScratch<double> scratch;
    MlpWorkspace<double> mws;
    auto decode = [&](const double* f, const Vec3d& d) { return model.decode(f, d, mws); };
    std::uniform_real_distribution<double> jig(-0.8, 0.8);
    for (int t = 0; t < 60; ++t) {
        const Rayd ray{{-3, jig(rng), jig(rng)}, {1, 0, 0}, 0, 1e30};
        const auto masked =
            render_pixel(model.density, model.appearance, decode, ray, opts, &occ, 0.0, scratch);
        const auto full =
            render_pixel(model.density, model.appearance, decode, ray, opts, nullptr, 0.0, scratch);
        CHECK(std::abs(masked.rgb.x - full.rgb.x) < 1e-3);
        CHECK(std::abs(masked.rgb.y - full.rgb.y) < 1e-3);
        CHECK(std::abs(masked.rgb.z - full.rgb.z) < 1e-3);
    }
}

TEST_CASE("ndc_transform axis case and frustum membership") {
    const int W = 100, H = 100;
    const double focal = 50.0, near = 1.0;
    SUBCASE("the central ray maps to the NDC axis") {
        const Rayd ray{{0, 0, 0}, {0, 0, -1}, 0, 1e30};
        const Rayd ndc = ndc_transform(ray, W, H, focal, near);
        CHECK(ndc.origin.x == doctest::Approx(0.0));
        CHECK(ndc.origin.y == doctest::Approx(0.0));
        CHECK(ndc.origin.z == doctest::Approx(-1.0));
        // Direction heads toward z' = 1.
        CHECK(ndc.direction.x == doctest::Approx(0.0));
        CHECK(ndc.direction.y == doctest::Approx(0.0));
        CHECK(ndc.direction.z > 0.0);
    }
    SUBCASE("a world point at infinity approaches z' = 1") {
        const Rayd ray{{0.2, -0.1, 0}, Vec3d{0.1, 0.05, -1}.normalized(), 0, 1e30};
        const Rayd ndc = ndc_transform(ray, W, H, focal, near);
        const Vec3d far_point = ndc.origin + ndc.direction * ndc.t_far;
        CHECK(far_point.z == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("membership in the NDC cube matches frustum membership") {
        std::mt19937_64 rng(53);
        std::uniform_real_distribution<double> off(-0.4, 0.4), dxy(-0.6, 0.6);
        int inside_hits = 0;
        for (int t = 0; t < 100; ++t) {
            const Vec3d origin{off(rng), off(rng), off(rng)};
            const Vec3d dir = Vec3d{dxy(rng), dxy(rng), -1.0}.normalized();
            const Rayd ray{origin, dir, 0, 1e30};
            const Rayd ndc = ndc_transform(ray, W, H, focal, near);
            std::uniform_real_distribution<double> ts(0.0, ndc.t_far);
            for (int s = 0; s < 10; ++s) {
                const double tn = ts(rng);
                const Vec3d p_ndc = ndc.origin + ndc.direction * tn;
                // Invert the warp: world depth and image-plane coordinates.
                const double wz = 2.0 * near / (p_ndc.z - 1.0);  // negative depth
                const double wx = -p_ndc.x * wz * (W / 2.0) / focal;
                const double wy = p_ndc.y * wz * (H / 2.0) / focal;
                const bool in_cube = std::abs(p_ndc.x) <= 1.0 && std::abs(p_ndc.y) <= 1.0 &&
                                     std::abs(p_ndc.z) <= 1.0;
                const bool in_frustum = wz <= -near + 1e-9 &&
                                        std::abs(wx / wz) <= (W / 2.0) / focal + 1e-9 &&
                                        std::abs(wy / wz) <= (H / 2.0) / focal + 1e-9;
                if (in_cube) {
                    CHECK(in_frustum);
                    ++inside_hits;
                }
            }
        }
        CHECK(inside_hits > 200);
    }
    SUBCASE("rays heading away from the image plane are rejected") {
        const Rayd ray{{0, 0, 0}, {0, 0, 1}, 0, 1e30};
        CHECK_THROWS_AS(ndc_transform(ray, W, H, focal, near), std::invalid_argument);
    }
}

TEST_CASE("ray_jitter is deterministic and uniform") {
    for (std::uint64_t i = 0; i < 100; ++i) {
        const double u = ray_jitter(7, i);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(u == ray_jitter(7, i));
    }
    CHECK(ray_jitter(7, 3) != ray_jitter(8, 3));
}
