#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "tensorf/gradients.hpp"
#include "tensorf/model.hpp"
#include "tensorf/optim.hpp"
#include "tensorf/renderer.hpp"
#include "tensorf/tensor_field.hpp"
#include "tensorf/threading.hpp"

using namespace tensorf;

namespace {

constexpr double kY0 = 0.28209479177387814;

double logistic_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Single-X-component VM field over [-1,1]^3 at resolution 2 whose vector
/// holds `vec_value` everywhere and whose plane matrix holds ones.
DensityField<double> constant_x_field(double vec_value) {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {2, 2, 2}};
    std::array<std::vector<VmComponent<double>>, 3> per_type;
    per_type[0].push_back(
        {std::vector<double>(2, vec_value), std::vector<double>(4, 1.0)});
    return make_vm_density<double>(g, per_type);
}

double entry_sum(const GradSet<double>& grads, const ParamSet<double>& params,
                 const std::string& name) {
    const int e = params.index_of(name);
    REQUIRE(e >= 0);
    double s = 0;
    for (double v : grads.arrays[static_cast<std::size_t>(e)]) s += v;
    return s;
}

/// Clamps factor magnitudes away from zero so finite differences never cross
/// the |theta| kink of the sparsity penalty.
void clamp_density_magnitudes(Model<double>& model, double floor) {
    auto clamp = [&](std::vector<double>& vals) {
        for (double& v : vals) {
            if (std::abs(v) < floor) v = v < 0 ? -floor : floor;
        }
    };
    for (auto& v : model.density.vectors) clamp(v.values);
    for (auto& m : model.density.matrices) clamp(m.values);
}

}  // namespace

TEST_CASE("constant-field ray gradients match the closed form") {
    Model<double> model;
    const double theta = 0.8;
    model.density = constant_x_field(theta);
    AppearanceField<double> app;
    app.spatial = constant_x_field(1.0);
    app.feature_count = 27;
    app.B.assign(27, 0.0);
    const Vec3d dc{0.9, -0.4, 0.2};
    app.B[0] = dc.x;
    app.B[1] = dc.y;
    app.B[2] = dc.z;
    model.appearance = app;
    model.decoder_kind = DecoderKind::Sh;
    model.density_shift = 0.0;

    RenderOptions<double> opts;
    opts.step_size = 0.25;
    opts.background = {0.15, 0.3, 0.45};
    opts.density_shift = 0.0;
    opts.alpha_cutoff = 0.0;
    opts.termination_tau = 0.0;

    const Rayd ray{{-2, 0, 0}, {1, 0, 0}, 0, 1e30};
    const Vec3d target{0.2, 0.9, 0.1};
    const double s = 1.0 / 3.0;

    ParamSet<double> params = collect_params(model);
    GradSet<double> grads(params);
    ThreadPool pool(1);
    std::vector<GradSet<double>> wg;
    std::vector<RenderWorkspace<double>> ws;
    const auto res =
        backward_render<double>(model, std::span<const Rayd>(&ray, 1),
                                std::span<const Vec3d>(&target, 1), opts, nullptr, LossConfig{},
                                params, grads, pool, wg, ws, s);

    // Constant density sigma over the clipped span [1,3]: the ray reduces to
    // a single homogeneous slab in front of the background.
    const double sigma = std::log1p(std::exp(theta));
    const double L = 2.0;
    const double E = std::exp(-sigma * L);
    Vec3d p{logistic_ref(dc.x * kY0), logistic_ref(dc.y * kY0), logistic_ref(dc.z * kY0)};
    Vec3d color = p * (1.0 - E) + opts.background * E;
    Vec3d resid = color - target;

    CHECK(res.l2 == doctest::Approx(s * resid.dot(resid)).epsilon(1e-12));
    CHECK(res.reg == 0.0);

    // dC_c/d(DC feature) = sum_q w_q * p'(raw_c) * Y0, and sum_q w_q = 1 - E.
    const int bi = params.index_of("appearance.B");
    REQUIRE(bi >= 0);
    const auto& gB = grads.arrays[static_cast<std::size_t>(bi)];
    for (int c = 0; c < 3; ++c) {
        const double pc = p[c];
        const double want = 2 * s * resid[c] * (1.0 - E) * pc * (1 - pc) * kY0;
        CHECK(gB[static_cast<std::size_t>(c)] == doctest::Approx(want).epsilon(1e-10));
    }
    // Direction (1,0,0) kills the odd-y/z basis rows entirely.
    for (int f : {3, 4, 5, 12, 13, 14, 15, 16, 17, 21, 22, 23}) {
        CHECK(gB[static_cast<std::size_t>(f)] == 0.0);
    }
    // Rows driven by Y3 = 0.48860251190291987 * x pick up that basis value.
    const double y3 = 0.48860251190291987;
    for (int c = 0; c < 3; ++c) {
        const double pc = p[c];
        const double want = 2 * s * resid[c] * (1.0 - E) * pc * (1 - pc) * y3;
        CHECK(gB[static_cast<std::size_t>(9 + c)] == doctest::Approx(want).epsilon(1e-10));
    }

    // Appearance factor taps sum to the stacked-value gradient; the vector
    // and the all-ones matrix see the same total because each is scaled by
    // the other's interpolated value (1).
    double dstacked = 0;
    for (int c = 0; c < 3; ++c) {
        const double pc = p[c];
        dstacked += 2 * s * resid[c] * (1.0 - E) * pc * (1 - pc) * dc[c] * kY0;
    }
    CHECK(entry_sum(grads, params, "appearance.vec.x") ==
          doctest::Approx(dstacked).epsilon(1e-10));
    CHECK(entry_sum(grads, params, "appearance.mat.yz") ==
          doctest::Approx(dstacked).epsilon(1e-10));

    // Density: dC/d(sigma) = L * E * (p - bg) when every sample shares sigma,
    // then through softplus' = logistic(theta). The matrix total carries the
    // extra factor theta from the vector interpolant.
    double dsigma = 0;
    for (int c = 0; c < 3; ++c)
        dsigma += 2 * s * resid[c] * L * E * (p[c] - opts.background[c]);
    const double dtheta = dsigma * logistic_ref(theta);
    CHECK(entry_sum(grads, params, "density.vec.x") == doctest::Approx(dtheta).epsilon(1e-10));
    CHECK(entry_sum(grads, params, "density.mat.yz") ==
          doctest::Approx(dtheta * theta).epsilon(1e-10));
}

TEST_CASE("effectively empty density yields vanishing gradients") {
    Model<double> model;
    model.density = constant_x_field(-40.0);
    AppearanceField<double> app;
    app.spatial = constant_x_field(1.0);
    app.feature_count = 27;
    app.B.assign(27, 0.0);
    app.B[0] = 1.0;
    model.appearance = app;
    model.decoder_kind = DecoderKind::Sh;

    RenderOptions<double> opts;
    opts.step_size = 0.2;
    opts.background = {1, 1, 1};
    opts.alpha_cutoff = 0.0;
    opts.termination_tau = 0.0;

    const Rayd ray{{-2, 0.1, -0.2}, Vec3d{1, 0.02, 0.05}.normalized(), 0, 1e30};
    const Vec3d target{0.25, 0.5, 0.75};

    ParamSet<double> params = collect_params(model);
    GradSet<double> grads(params);
    ThreadPool pool(1);
    std::vector<GradSet<double>> wg;
    std::vector<RenderWorkspace<double>> ws;
    const auto res =
        backward_render<double>(model, std::span<const Rayd>(&ray, 1),
                                std::span<const Vec3d>(&target, 1), opts, nullptr, LossConfig{},
                                params, grads, pool, wg, ws, 1.0 / 3.0);

    // The ray sees through to the background, so the loss is pinned there.
    const Vec3d resid = opts.background - target;
    CHECK(res.l2 == doctest::Approx(resid.dot(resid) / 3.0).epsilon(1e-8));
    for (const auto& arr : grads.arrays)
        for (double gv : arr) CHECK(std::abs(gv) < 1e-12);
}

TEST_CASE("rays that miss the volume leave no gradient anywhere") {
    std::mt19937_64 rng(60);
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {3, 3, 3}};
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {2, 2, 2}, rng, 0.3);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {2, 2, 2}, 27, rng, 0.3);
    model.decoder_kind = DecoderKind::Sh;

    RenderOptions<double> opts;
    opts.step_size = 0.1;
    opts.background = {0.2, 0.2, 0.2};

    const Rayd ray{{5, 5, 5}, Vec3d{1, 0.3, 0.1}.normalized(), 0, 1e30};
    const Vec3d target{0.6, 0.1, 0.3};

    ParamSet<double> params = collect_params(model);
    GradSet<double> grads(params);
    ThreadPool pool(1);
    std::vector<GradSet<double>> wg;
    std::vector<RenderWorkspace<double>> ws;
    const auto res =
        backward_render<double>(model, std::span<const Rayd>(&ray, 1),
                                std::span<const Vec3d>(&target, 1), opts, nullptr, LossConfig{},
                                params, grads, pool, wg, ws, 1.0 / 3.0);

    const Vec3d resid = opts.background - target;
    CHECK(res.l2 == doctest::Approx(resid.dot(resid) / 3.0).epsilon(1e-14));
    for (const auto& arr : grads.arrays)
        for (double gv : arr) CHECK(gv == 0.0);
}

TEST_CASE("nodes outside a ray's support receive exactly zero gradient") {
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {3, 3, 3}};
    std::mt19937_64 rng(61);
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {1, 1, 1}, rng, 0.4);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {1, 1, 1}, 27, rng, 0.4);
    model.decoder_kind = DecoderKind::Sh;

    RenderOptions<double> opts;
    opts.step_size = 0.05;
    opts.background = {1, 1, 1};
    opts.alpha_cutoff = 0.0;
    opts.termination_tau = 0.0;

    // March along +y inside the x = -1 face: only x-node 0 has support.
    const Rayd ray{{-1, -3, 0}, {0, 1, 0}, 0, 1e30};
    const Vec3d target{0.4, 0.5, 0.6};

    ParamSet<double> params = collect_params(model);
    GradSet<double> grads(params);
    ThreadPool pool(1);
    std::vector<GradSet<double>> wg;
    std::vector<RenderWorkspace<double>> ws;
    backward_render<double>(model, std::span<const Rayd>(&ray, 1),
                            std::span<const Vec3d>(&target, 1), opts, nullptr, LossConfig{},
                            params, grads, pool, wg, ws, 1.0 / 3.0);

    for (const char* prefix : {"density", "appearance"}) {
        const int e = params.index_of(std::string(prefix) + ".vec.x");
        REQUIRE(e >= 0);
        const auto& gv = grads.arrays[static_cast<std::size_t>(e)];
        REQUIRE(gv.size() == 3);
        CHECK(gv[0] != 0.0);
        CHECK(gv[1] == 0.0);
        CHECK(gv[2] == 0.0);
    }
}

TEST_CASE("scattered factor gradients obey partition of unity") {
    std::mt19937_64 rng(62);
    std::uniform_real_distribution<double> pos(0.05, 1.95);
    std::uniform_real_distribution<double> dval(-2.0, 2.0);

    SUBCASE("vector-matrix all-ones field") {
        GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {3, 3, 3}};
        std::array<std::vector<VmComponent<double>>, 3> per_type;
        per_type[0].assign(2, {std::vector<double>(3, 1.0), std::vector<double>(9, 1.0)});
        per_type[1].assign(1, {std::vector<double>(3, 1.0), std::vector<double>(9, 1.0)});
        per_type[2].assign(3, {std::vector<double>(3, 1.0), std::vector<double>(9, 1.0)});
        auto f = make_vm_density<double>(g, per_type);

        for (int t = 0; t < 20; ++t) {
            std::vector<double> ups(f.total_components());
            for (auto& u : ups) u = dval(rng);
            std::array<std::vector<double>, 3> gvec, gmat;
            for (int m = 0; m < 3; ++m) {
                gvec[m].assign(f.vectors[m].values.size(), 0.0);
                gmat[m].assign(f.matrices[m].values.size(), 0.0);
            }
            double* gv[3] = {gvec[0].data(), gvec[1].data(), gvec[2].data()};
            double* gm[3] = {gmat[0].data(), gmat[1].data(), gmat[2].data()};
            const Vec3<double> index{pos(rng), pos(rng), pos(rng)};
            detail::scatter_components<double>(
                f, index, [&](int r) { return ups[static_cast<std::size_t>(r)]; }, gv, gm);

            int offset = 0;
            for (int m = 0; m < 3; ++m) {
                const int R = f.vectors[m].count;
                for (int r = 0; r < R; ++r) {
                    double sv = 0, sm = 0;
                    for (std::size_t i = static_cast<std::size_t>(r); i < gvec[m].size();
                         i += static_cast<std::size_t>(R))
                        sv += gvec[m][i];
                    for (std::size_t i = static_cast<std::size_t>(r); i < gmat[m].size();
                         i += static_cast<std::size_t>(R))
                        sm += gmat[m][i];
                    CHECK(sv == doctest::Approx(ups[static_cast<std::size_t>(offset + r)])
                                    .epsilon(1e-12));
                    CHECK(sm == doctest::Approx(ups[static_cast<std::size_t>(offset + r)])
                                    .epsilon(1e-12));
                }
                offset += R;
            }
        }
    }

    SUBCASE("canonical-polyadic all-ones field") {
        GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {4, 4, 4}};
        std::vector<std::array<std::vector<double>, 3>> triples(
            2, {std::vector<double>(4, 1.0), std::vector<double>(4, 1.0),
                std::vector<double>(4, 1.0)});
        auto f = make_cp_density<double>(g, triples);

        for (int t = 0; t < 20; ++t) {
            std::vector<double> ups(2);
            for (auto& u : ups) u = dval(rng);
            std::array<std::vector<double>, 3> gvec;
            for (int m = 0; m < 3; ++m) gvec[m].assign(f.vectors[m].values.size(), 0.0);
            double* gv[3] = {gvec[0].data(), gvec[1].data(), gvec[2].data()};
            double* gm[3] = {nullptr, nullptr, nullptr};
            const Vec3<double> index{pos(rng) * 1.5, pos(rng) * 1.5, pos(rng) * 1.5};
            detail::scatter_components<double>(
                f, index, [&](int r) { return ups[static_cast<std::size_t>(r)]; }, gv, gm);

            for (int m = 0; m < 3; ++m) {
                for (int r = 0; r < 2; ++r) {
                    double sv = 0;
                    for (std::size_t i = static_cast<std::size_t>(r); i < gvec[m].size(); i += 2)
                        sv += gvec[m][i];
                    CHECK(sv ==
                          doctest::Approx(ups[static_cast<std::size_t>(r)]).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("batch gradients equal the sum of consecutive sub-batches bitwise") {
    std::mt19937_64 rng(63);
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {4, 4, 4}};
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {2, 2, 2}, rng, 0.3);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {2, 2, 2}, 27, rng, 0.3);
    model.decoder_kind = DecoderKind::Sh;

    RenderOptions<double> opts;
    opts.step_size = 0.07;
    opts.background = {0.9, 0.9, 0.9};

    std::uniform_real_distribution<double> sd(-0.9, 0.9);
    std::vector<Rayd> rays;
    std::vector<Vec3d> targets;
    for (int i = 0; i < 8; ++i) {
        const Vec3d origin{-3.0, sd(rng), sd(rng)};
        const Vec3d through{sd(rng), sd(rng), sd(rng)};
        rays.push_back({origin, (through - origin).normalized(), 0, 1e30});
        targets.push_back({0.5 + 0.4 * sd(rng), 0.5 + 0.4 * sd(rng), 0.5 + 0.4 * sd(rng)});
    }
    const double s = 1.0 / (3.0 * 8.0);

    ParamSet<double> params = collect_params(model);
    ThreadPool pool(1);
    std::vector<GradSet<double>> wg;
    std::vector<RenderWorkspace<double>> ws;

    GradSet<double> full(params);
    const auto rf = backward_render<double>(model, std::span<const Rayd>(rays),
                                            std::span<const Vec3d>(targets), opts, nullptr,
                                            LossConfig{}, params, full, pool, wg, ws, s);

    GradSet<double> split(params);
    const auto ra = backward_render<double>(
        model, std::span<const Rayd>(rays.data(), 4), std::span<const Vec3d>(targets.data(), 4),
        opts, nullptr, LossConfig{}, params, split, pool, wg, ws, s);
    const auto rb = backward_render<double>(
        model, std::span<const Rayd>(rays.data() + 4, 4),
        std::span<const Vec3d>(targets.data() + 4, 4), opts, nullptr, LossConfig{}, params, split,
        pool, wg, ws, s);

    CHECK(rf.l2 == doctest::Approx(ra.l2 + rb.l2).epsilon(1e-13));
    for (std::size_t e = 0; e < full.arrays.size(); ++e) {
        REQUIRE(full.arrays[e].size() == split.arrays[e].size());
        for (std::size_t i = 0; i < full.arrays[e].size(); ++i)
            CHECK(full.arrays[e][i] == split.arrays[e][i]);
    }

    SUBCASE("repeated evaluation is bitwise reproducible") {
        GradSet<double> again(params);
        backward_render<double>(model, std::span<const Rayd>(rays),
                                std::span<const Vec3d>(targets), opts, nullptr, LossConfig{},
                                params, again, pool, wg, ws, s);
        for (std::size_t e = 0; e < full.arrays.size(); ++e)
            for (std::size_t i = 0; i < full.arrays[e].size(); ++i)
                CHECK(full.arrays[e][i] == again.arrays[e][i]);
    }
}

TEST_CASE("non-finite targets are rejected with a diagnostic") {
    std::mt19937_64 rng(64);
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {2, 2, 2}};
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {1, 1, 1}, rng, 0.3);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {1, 1, 1}, 27, rng, 0.3);
    model.decoder_kind = DecoderKind::Sh;

    RenderOptions<double> opts;
    opts.step_size = 0.2;

    const Rayd ray{{-2, 0, 0}, {1, 0, 0}, 0, 1e30};
    const Vec3d target{std::numeric_limits<double>::quiet_NaN(), 0, 0};

    ParamSet<double> params = collect_params(model);
    GradSet<double> grads(params);
    ThreadPool pool(1);
    std::vector<GradSet<double>> wg;
    std::vector<RenderWorkspace<double>> ws;
    bool threw = false;
    try {
        backward_render<double>(model, std::span<const Rayd>(&ray, 1),
                                std::span<const Vec3d>(&target, 1), opts, nullptr, LossConfig{},
                                params, grads, pool, wg, ws, 1.0 / 3.0);
    } catch (const std::runtime_error& err) {
        threw = true;
        CHECK(std::string(err.what()).find("non-finite") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("finite-difference checker validates itself on polynomial losses") {
    std::mt19937_64 rng(65);
    GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {2, 2, 2}};
    Model<double> model;
    model.density = random_density_field<double>(FieldMode::VM, g, {1, 1, 1}, rng, 0.5);
    model.appearance = random_appearance_field<double>(FieldMode::VM, g, {1, 1, 1}, 27, rng, 0.5);
    model.decoder_kind = DecoderKind::Sh;

    ParamSet<double> params = collect_params(model);
    ThreadPool pool(1);

    SUBCASE("quadratic loss, exact analytic gradient") {
        GradSet<double> analytic(params);
        for (std::size_t e = 0; e < params.entries.size(); ++e)
            for (std::size_t i = 0; i < params.entries[e].size; ++i)
                analytic.arrays[e][i] = 2.0 * params.entries[e].data[i];
        auto loss = [](Model<double>& m) {
            ParamSet<double> p = collect_params(m);
            double s = 0;
            for (const auto& e : p.entries)
                for (std::size_t i = 0; i < e.size; ++i) s += e.data[i] * e.data[i];
            return s;
        };
        const auto report = grad_check<double>(model, params, analytic, loss, 1e-6, 1e-7, pool);
        CHECK(report.pass);
        CHECK(report.max_rel_error < 1e-7);
    }

    SUBCASE("linear loss is exact to machine precision") {
        GradSet<double> analytic(params);
        for (auto& arr : analytic.arrays) std::fill(arr.begin(), arr.end(), 3.0);
        auto loss = [](Model<double>& m) {
            ParamSet<double> p = collect_params(m);
            double s = 0;
            for (const auto& e : p.entries)
                for (std::size_t i = 0; i < e.size; ++i) s += 3.0 * e.data[i];
            return s;
        };
        const auto report = grad_check<double>(model, params, analytic, loss, 1e-6, 1e-9, pool);
        CHECK(report.pass);
    }

    SUBCASE("a wrong analytic gradient is flagged") {
        GradSet<double> analytic(params);
        for (std::size_t e = 0; e < params.entries.size(); ++e)
            for (std::size_t i = 0; i < params.entries[e].size; ++i)
                analytic.arrays[e][i] = 3.0 * params.entries[e].data[i];
        auto loss = [](Model<double>& m) {
            ParamSet<double> p = collect_params(m);
            double s = 0;
            for (const auto& e : p.entries)
                for (std::size_t i = 0; i < e.size; ++i) s += e.data[i] * e.data[i];
            return s;
        };
        const auto report = grad_check<double>(model, params, analytic, loss, 1e-6, 1e-4, pool);
        CHECK(!report.pass);
        CHECK(report.max_rel_error > 0.3);
    }
}

TEST_CASE("full-model gradients pass a finite-difference audit") {
    RenderOptions<double> opts;
    opts.step_size = 0.23;
    opts.background = {1, 1, 1};
    opts.alpha_cutoff = 0.0;
    opts.termination_tau = 0.0;

    std::vector<Rayd> rays;
    std::vector<Vec3d> targets;
    for (int i = 0; i < 4; ++i) {
        const double off = -0.5 + 0.3 * i;
        rays.push_back({{-2.5, off, 0.2 - 0.1 * i},
                        Vec3d{1.0, 0.05 * i, -0.04 * i}.normalized(), 0, 1e30});
        targets.push_back({0.3, 0.6, 0.9});
    }

    auto audit = [&](Model<double>& model, const LossConfig& cfg, double tol) {
        ParamSet<double> params = collect_params(model);
        GradSet<double> grads(params);
        ThreadPool pool(1);
        std::vector<GradSet<double>> wg;
        std::vector<RenderWorkspace<double>> ws;
        const double s = 1.0 / (3.0 * static_cast<double>(rays.size()));
        backward_render<double>(model, std::span<const Rayd>(rays),
                                std::span<const Vec3d>(targets), opts, nullptr, cfg, params,
                                grads, pool, wg, ws, s);

        auto loss = [&](Model<double>& m) {
            RenderWorkspace<double> lws;
            double l2 = 0;
            for (std::size_t i = 0; i < rays.size(); ++i) {
                const Vec3d c = forward_render<double>(m, rays[i], opts, nullptr, 0.0, lws);
                const Vec3d r = c - targets[i];
                l2 += r.dot(r);
            }
            return s * l2 + cfg.weight * model_reg(m, cfg);
        };
        return grad_check<double>(model, params, grads, loss, 1e-5, tol, pool);
    };

    SUBCASE("vector-matrix field with the spherical-harmonic decoder") {
        std::mt19937_64 rng(7);
        GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {3, 3, 3}};
        Model<double> model;
        model.density = random_density_field<double>(FieldMode::VM, g, {1, 1, 1}, rng, 0.4);
        model.appearance =
            random_appearance_field<double>(FieldMode::VM, g, {1, 1, 1}, 27, rng, 0.4);
        model.decoder_kind = DecoderKind::Sh;
        LossConfig cfg;
        cfg.reg = RegKind::L1;
        cfg.weight = 0.01;
        clamp_density_magnitudes(model, 1e-3);
        const auto report = audit(model, cfg, 1e-4);
        if (!report.pass) {
            for (const auto& pr : report.params)
                MESSAGE(pr.name, " rel ", pr.max_rel_error, " analytic ", pr.analytic,
                        " numeric ", pr.numeric);
        }
        CHECK(report.pass);
    }

    SUBCASE("canonical-polyadic field with the neural decoder") {
        std::mt19937_64 rng(7);
        GridGeometry g{{{-1, -1, -1}, {1, 1, 1}}, {3, 3, 3}};
        Model<double> model;
        model.density = random_density_field<double>(FieldMode::CP, g, {2, 2, 2}, rng, 0.4);
        model.appearance =
            random_appearance_field<double>(FieldMode::CP, g, {2, 2, 2}, 27, rng, 0.4);
        model.decoder_kind = DecoderKind::Mlp;
        model.mlp.feature_count = 27;
        model.mlp.hidden_width = 16;
        model.mlp.freq_count = 2;
        model.mlp.allocate();
        model.mlp.init(rng);
        LossConfig cfg;
        cfg.reg = RegKind::TV;
        cfg.weight = 0.02;
        const auto report = audit(model, cfg, 1e-4);
        if (!report.pass) {
            for (const auto& pr : report.params)
                MESSAGE(pr.name, " rel ", pr.max_rel_error, " analytic ", pr.analytic,
                        " numeric ", pr.numeric);
        }
        CHECK(report.pass);
    }
}
