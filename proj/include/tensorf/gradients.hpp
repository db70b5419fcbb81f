#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorf/model.hpp"
#include "tensorf/optim.hpp"
#include "tensorf/renderer.hpp"
#include "tensorf/threading.hpp"

namespace tensorf {

/// Entry indices of the named arrays inside a ParamSet; -1 where the model
/// has no such array (CP matrices, SH decoder weights).
struct GradIndex {
    int density_vec[3] = {-1, -1, -1};
    int density_mat[3] = {-1, -1, -1};
    int appearance_vec[3] = {-1, -1, -1};
    int appearance_mat[3] = {-1, -1, -1};
    int B = -1;
    int W1 = -1, b1 = -1, W2 = -1, b2 = -1;
};

template <typename T>
inline GradIndex build_grad_index(const ParamSet<T>& params) {
    GradIndex idx;
    static const char* axis_names[3] = {"x", "y", "z"};
    static const char* plane_names[3] = {"yz", "xz", "xy"};
    for (int m = 0; m < 3; ++m) {
        idx.density_vec[m] = params.index_of(std::string("density.vec.") + axis_names[m]);
        idx.density_mat[m] = params.index_of(std::string("density.mat.") + plane_names[m]);
        idx.appearance_vec[m] = params.index_of(std::string("appearance.vec.") + axis_names[m]);
        idx.appearance_mat[m] = params.index_of(std::string("appearance.mat.") + plane_names[m]);
    }
    idx.B = params.index_of("appearance.B");
    idx.W1 = params.index_of("mlp.W1");
    idx.b1 = params.index_of("mlp.b1");
    idx.W2 = params.index_of("mlp.W2");
    idx.b2 = params.index_of("mlp.b2");
    return idx;
}

/// Non-owning destination arrays inside one GradSet, resolved once per batch.
template <typename T>
struct GradPointers {
    T* density_vec[3] = {nullptr, nullptr, nullptr};
    T* density_mat[3] = {nullptr, nullptr, nullptr};
    T* appearance_vec[3] = {nullptr, nullptr, nullptr};
    T* appearance_mat[3] = {nullptr, nullptr, nullptr};
    T* B = nullptr;
    MlpGrads<T> mlp;
};

template <typename T>
inline GradPointers<T> grad_pointers(GradSet<T>& grads, const GradIndex& idx) {
    GradPointers<T> p;
    auto get = [&](int e) -> T* { return e < 0 ? nullptr : grads.data(static_cast<std::size_t>(e)); };
    for (int m = 0; m < 3; ++m) {
        p.density_vec[m] = get(idx.density_vec[m]);
        p.density_mat[m] = get(idx.density_mat[m]);
        p.appearance_vec[m] = get(idx.appearance_vec[m]);
        p.appearance_mat[m] = get(idx.appearance_mat[m]);
    }
    p.B = get(idx.B);
    p.mlp.W1 = get(idx.W1);
    p.mlp.b1 = get(idx.b1);
    p.mlp.W2 = get(idx.W2);
    p.mlp.b2 = get(idx.b2);
    return p;
}

namespace detail {

/// Distributes per-component upstream gradients through the factor
/// interpolation: each vector tap gets its linear weight, each matrix corner
/// its bilinear weight. dval_of(r) is the upstream gradient of component r in
/// the stacked order.
template <typename T, typename DvalFn>
inline void scatter_components(const DensityField<T>& f, const Vec3<T>& index, DvalFn&& dval_of,
                               T* const gvec[3], T* const gmat[3]) {
    if (f.mode == FieldMode::CP) {
        const auto& vx = f.vectors[0];
        const auto& vy = f.vectors[1];
        const auto& vz = f.vectors[2];
        const int R = vx.count;
        const auto tx = lin_tap(index.x, vx.n);
        const auto ty = lin_tap(index.y, vy.n);
        const auto tz = lin_tap(index.z, vz.n);
        for (int r = 0; r < R; ++r) {
            const T xv = vx.at(tx.i0, r) * tx.w0 + vx.at(tx.i0 + 1, r) * tx.w1;
            const T yv = vy.at(ty.i0, r) * ty.w0 + vy.at(ty.i0 + 1, r) * ty.w1;
            const T zv = vz.at(tz.i0, r) * tz.w0 + vz.at(tz.i0 + 1, r) * tz.w1;
            const T d = dval_of(r);
            const T dx = d * yv * zv, dy = d * xv * zv, dz = d * xv * yv;
            if (gvec[0]) {
                gvec[0][static_cast<std::size_t>(tx.i0) * R + r] += dx * tx.w0;
                gvec[0][static_cast<std::size_t>(tx.i0 + 1) * R + r] += dx * tx.w1;
            }
            if (gvec[1]) {
                gvec[1][static_cast<std::size_t>(ty.i0) * R + r] += dy * ty.w0;
                gvec[1][static_cast<std::size_t>(ty.i0 + 1) * R + r] += dy * ty.w1;
            }
            if (gvec[2]) {
                gvec[2][static_cast<std::size_t>(tz.i0) * R + r] += dz * tz.w0;
                gvec[2][static_cast<std::size_t>(tz.i0 + 1) * R + r] += dz * tz.w1;
            }
        }
        return;
    }
    int offset = 0;
    for (int m = 0; m < 3; ++m) {
        const auto& v = f.vectors[m];
        const auto& mm = f.matrices[m];
        const int R = v.count;
        const Plane pl = plane_of(static_cast<Axis>(m));
        const auto tv = lin_tap(index[m], v.n);
        const auto t0 = lin_tap(index[static_cast<int>(plane_axis0(pl))], mm.n0);
        const auto t1 = lin_tap(index[static_cast<int>(plane_axis1(pl))], mm.n1);
        const std::size_t row = static_cast<std::size_t>(mm.n1) * R;
        const std::size_t base = static_cast<std::size_t>(t0.i0) * row +
                                 static_cast<std::size_t>(t1.i0) * R;
        const T w00 = t0.w0 * t1.w0, w01 = t0.w0 * t1.w1;
        const T w10 = t0.w1 * t1.w0, w11 = t0.w1 * t1.w1;
        for (int r = 0; r < R; ++r) {
            const T vint = v.at(tv.i0, r) * tv.w0 + v.at(tv.i0 + 1, r) * tv.w1;
            const T mint = mm.values[base + r] * w00 + mm.values[base + R + r] * w01 +
                           mm.values[base + row + r] * w10 + mm.values[base + row + R + r] * w11;
            const T d = dval_of(offset + r);
            const T dv = d * mint;
            const T dm = d * vint;
            if (gvec[m]) {
                gvec[m][static_cast<std::size_t>(tv.i0) * R + r] += dv * tv.w0;
                gvec[m][static_cast<std::size_t>(tv.i0 + 1) * R + r] += dv * tv.w1;
            }
            if (gmat[m]) {
                gmat[m][base + r] += dm * w00;
                gmat[m][base + R + r] += dm * w01;
                gmat[m][base + row + r] += dm * w10;
                gmat[m][base + row + R + r] += dm * w11;
            }
        }
        offset += R;
    }
}

}  // namespace detail

/// Per-ray state kept between the forward and backward passes: enough to
/// avoid a second density sweep, while appearance features and decoder
/// activations are recomputed sample by sample during the backward pass.
template <typename T>
struct RenderWorkspace {
    RenderSteps<T> steps;
    std::vector<T> raws;
    std::vector<T> weights;
    std::vector<T> tau_after;
    std::vector<std::uint8_t> evaluated;
    std::vector<T> features;  // count * P, rows for evaluated samples only
    std::vector<T> stacked, dstacked, dfeat;
    MlpWorkspace<T> mlp;
};

namespace detail {

/// Forward pass of one ray, storing per-sample intermediates. Must mirror
/// render_pixel exactly; the reference-path tests compare the two.
template <typename T>
inline Vec3<T> ray_forward(const Model<T>& model, const Ray<T>& ray, const RenderOptions<T>& opts,
                           const OccupancyVolume* occ, T jitter, RenderWorkspace<T>& ws) {
    ws.steps.clear();
    const auto span = clip_ray(ray, model.density.geom.bbox.template cast<T>());
    if (!span) return opts.background;
    Ray<T> clipped = ray;
    clipped.t_near = span->first;
    clipped.t_far = span->second;
    sample_points(clipped, opts.step_size, occ, jitter, ws.steps);

    const int P = model.appearance.feature_count;
    const int q_total = ws.steps.count();
    ws.raws.resize(q_total);
    ws.weights.resize(q_total);
    ws.tau_after.resize(q_total);
    ws.evaluated.assign(q_total, 0);
    ws.features.resize(static_cast<std::size_t>(q_total) * P);

    Vec3<T> color{};
    T tau = T(1);
    int q_used = q_total;
    for (int q = 0; q < q_total; ++q) {
        if (opts.termination_tau > T(0) && tau < opts.termination_tau) {
            q_used = q;
            break;
        }
        const auto sp = SamplePoint<T>::from_world(model.density.geom, ws.steps.positions[q]);
        const T raw = sample_density(model.density, sp);
        const T sigma = density_activation(raw, opts.density_shift);
        const T alpha = -std::expm1(-sigma * ws.steps.deltas[q]);
        ws.raws[q] = raw;
        ws.steps.sigmas[q] = sigma;
        if (alpha > opts.alpha_cutoff) {
            T* feat = ws.features.data() + static_cast<std::size_t>(q) * P;
            sample_appearance(model.appearance, sp, feat);
            ws.steps.colors[q] = model.decode(feat, ray.direction, ws.mlp);
            ws.evaluated[q] = 1;
        } else {
            ws.steps.colors[q] = Vec3<T>{};
        }
        const T w = tau * alpha;
        color += ws.steps.colors[q] * w;
        ws.weights[q] = w;
        tau *= T(1) - alpha;
        ws.tau_after[q] = tau;
    }
    if (q_used < q_total) {
        ws.steps.ts.resize(q_used);
        ws.steps.positions.resize(q_used);
        ws.steps.deltas.resize(q_used);
        ws.steps.sigmas.resize(q_used);
        ws.steps.colors.resize(q_used);
        ws.raws.resize(q_used);
        ws.weights.resize(q_used);
        ws.tau_after.resize(q_used);
        ws.evaluated.resize(q_used);
    }
    color += opts.background * tau;
    return color;
}

/// Backward pass of one ray given dL/d(color). Walks samples back to front,
/// carrying the suffix color sum S_q (everything the ray accumulates after
/// sample q, background included), so d(color)/d(sigma_q) = delta_q *
/// (tau_{q+1} c_q - S_q).
template <typename T>
inline void ray_backward(const Model<T>& model, const Ray<T>& ray, const RenderOptions<T>& opts,
                         const Vec3<T>& dcolor, RenderWorkspace<T>& ws,
                         const GradPointers<T>& gp) {
    const int q_count = ws.steps.count();
    const int P = model.appearance.feature_count;
    const int C = model.appearance.stacked_size();
    const T tau_end = q_count == 0 ? T(1) : ws.tau_after[q_count - 1];
    Vec3<T> suffix = opts.background * tau_end;
    ws.stacked.resize(C);
    ws.dstacked.resize(C);
    ws.dfeat.resize(P);
    for (int q = q_count - 1; q >= 0; --q) {
        const auto sp = SamplePoint<T>::from_world(model.density.geom, ws.steps.positions[q]);
        const T w = ws.weights[q];
        if (ws.evaluated[q]) {
            const Vec3<T> drgb = dcolor * w;
            const T* feat = ws.features.data() + static_cast<std::size_t>(q) * P;
            std::fill(ws.dfeat.begin(), ws.dfeat.end(), T(0));
            if (model.decoder_kind == DecoderKind::Sh) {
                decode_sh_backward(model.sh, feat, ray.direction, drgb, ws.dfeat.data());
            } else {
                decode_mlp(model.mlp, feat, ray.direction, ws.mlp);
                decode_mlp_backward(model.mlp, feat, ray.direction, ws.mlp, drgb, gp.mlp,
                                    ws.dfeat.data(), static_cast<Vec3<T>*>(nullptr));
            }
            sample_components(model.appearance.spatial, sp, ws.stacked.data());
            std::fill(ws.dstacked.begin(), ws.dstacked.end(), T(0));
            for (int c = 0; c < P; ++c) {
                const T df = ws.dfeat[c];
                if (df == T(0)) continue;
                const T* brow = model.appearance.B.data() + static_cast<std::size_t>(c) * C;
                if (gp.B) {
                    T* grow = gp.B + static_cast<std::size_t>(c) * C;
                    for (int r = 0; r < C; ++r) grow[r] += df * ws.stacked[r];
                }
                for (int r = 0; r < C; ++r) ws.dstacked[r] += df * brow[r];
            }
            detail::scatter_components(
                model.appearance.spatial, sp.index, [&](int r) { return ws.dstacked[r]; },
                gp.appearance_vec, gp.appearance_mat);
        }
        const T tau_next = ws.tau_after[q];
        const Vec3<T>& cq = ws.steps.colors[q];
        const T dsigma = ws.steps.deltas[q] * (dcolor.x * (tau_next * cq.x - suffix.x) +
                                               dcolor.y * (tau_next * cq.y - suffix.y) +
                                               dcolor.z * (tau_next * cq.z - suffix.z));
        suffix += cq * w;
        const T draw = dsigma * density_activation_grad(ws.raws[q], opts.density_shift);
        detail::scatter_components(
            model.density, sp.index, [&](int) { return draw; }, gp.density_vec, gp.density_mat);
    }
}

}  // namespace detail

struct BatchResult {
    double loss = 0;  // l2 + omega * reg
    double l2 = 0;
    double reg = 0;
};

/// Loss and exact parameter gradients of one ray batch. Each ray's squared
/// residual enters the loss as l2_scale * ||C - target||^2 (the trainer
/// passes 1/(3 * batch size) for a per-channel mean). Gradients ACCUMULATE
/// into `grads`; the caller zeroes between steps. With a single-thread pool
/// rays accumulate directly into `grads` in index order, so splitting a batch
/// into consecutive sub-batches reproduces the identical bit pattern; with
/// more threads, per-worker buffers are merged in fixed worker order, which
/// is deterministic for a fixed thread count.
template <typename T>
inline BatchResult backward_render(const Model<T>& model, std::span<const Ray<T>> rays,
                                   std::span<const Vec3<T>> targets, const RenderOptions<T>& opts,
                                   const OccupancyVolume* occ, const LossConfig& loss_cfg,
                                   const ParamSet<T>& params, GradSet<T>& grads, ThreadPool& pool,
                                   std::vector<GradSet<T>>& worker_grads,
                                   std::vector<RenderWorkspace<T>>& worker_ws, double l2_scale,
                                   std::uint64_t jitter_salt = 0) {
    if (rays.size() != targets.size())
        throw std::invalid_argument("backward_render: rays/targets size mismatch");
    const GradIndex idx = build_grad_index(params);
    const int W = pool.thread_count();
    const bool direct = W == 1;
    if (!direct) {
        worker_grads.resize(static_cast<std::size_t>(W));
        for (auto& g : worker_grads) g.resize(params);  // also zeroes
    }
    worker_ws.resize(static_cast<std::size_t>(W));
    std::vector<double> partial_l2(static_cast<std::size_t>(W), 0.0);

    GradPointers<T> direct_gp = grad_pointers(grads, idx);
    pool.parallel_ranges(rays.size(), [&](int w, std::size_t begin, std::size_t end) {
        const GradPointers<T> gp =
            direct ? direct_gp : grad_pointers(worker_grads[static_cast<std::size_t>(w)], idx);
        auto& ws = worker_ws[static_cast<std::size_t>(w)];
        double l2 = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const T jitter =
                opts.jitter ? static_cast<T>(hash_uniform(opts.jitter_seed, jitter_salt, i)) : T(0);
            const Vec3<T> color = detail::ray_forward(model, rays[i], opts, occ, jitter, ws);
            const Vec3<T> res = color - targets[i];
            l2 += static_cast<double>(res.dot(res));
            const Vec3<T> dcolor = res * static_cast<T>(2 * l2_scale);
            detail::ray_backward(model, rays[i], opts, dcolor, ws, gp);
        }
        partial_l2[static_cast<std::size_t>(w)] = l2;
    });

    if (!direct)
        for (auto& g : worker_grads) grads.accumulate(g);

    BatchResult out;
    for (const double p : partial_l2) out.l2 += p;
    out.l2 *= l2_scale;
    out.reg = model_reg(model, loss_cfg);
    out.loss = total_loss(out.l2, out.reg, loss_cfg.weight);

    if (loss_cfg.reg != RegKind::None && loss_cfg.weight != 0) {
        GradPointers<T> gp = grad_pointers(grads, idx);
        const T omega = static_cast<T>(loss_cfg.weight);
        if (loss_cfg.reg == RegKind::L1) {
            l1_reg_backward(model.density, omega, gp.density_vec, gp.density_mat);
        } else {
            tv_reg_backward(model.density, &model.appearance, omega, loss_cfg.tv_appearance_scale,
                            loss_cfg.tv_squared, gp.density_vec, gp.density_mat, gp.appearance_vec,
                            gp.appearance_mat);
        }
    }

    if (!std::isfinite(out.loss)) throw std::runtime_error("backward_render: non-finite loss");
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        const T* g = grads.data(e);
        for (std::size_t i = 0; i < params.entries[e].size; ++i)
            if (!std::isfinite(static_cast<double>(g[i])))
                throw std::runtime_error("backward_render: non-finite gradient in " +
                                         params.entries[e].name);
    }
    return out;
}

/// Plain forward render of one ray through the same code path the training
/// backward uses.
template <typename T>
inline Vec3<T> forward_render(const Model<T>& model, const Ray<T>& ray,
                              const RenderOptions<T>& opts, const OccupancyVolume* occ, T jitter,
                              RenderWorkspace<T>& ws) {
    return detail::ray_forward(model, ray, opts, occ, jitter, ws);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckParamReport {
    std::string name;
    double max_rel_error = 0;
    std::size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
};

struct GradCheckReport {
    std::vector<GradCheckParamReport> params;
    double max_rel_error = 0;
    bool pass = true;
};

/// Central finite differences of `loss_fn` against an analytic GradSet, every
/// scalar parameter perturbed in turn. Differences below abs_floor count as
/// agreement (they are within the h^2 truncation noise of the difference
/// quotient); larger ones are scored relative to max(|analytic|, |numeric|).
/// Workers perturb private model clones, so loss_fn must be safe to call
/// concurrently on distinct models.
template <typename T>
inline GradCheckReport grad_check(const Model<T>& model, const ParamSet<T>& params,
                                  const GradSet<T>& analytic,
                                  const std::function<double(Model<T>&)>& loss_fn, double h,
                                  double tolerance, ThreadPool& pool, double abs_floor = 1e-8) {
    const std::size_t entry_count = params.entries.size();
    std::vector<std::size_t> prefix(entry_count + 1, 0);
    for (std::size_t e = 0; e < entry_count; ++e) prefix[e + 1] = prefix[e] + params.entries[e].size;
    const std::size_t total = prefix[entry_count];

    const int W = pool.thread_count();
    std::vector<std::vector<GradCheckParamReport>> worker_reports(
        static_cast<std::size_t>(W));

    pool.parallel_ranges(total, [&](int w, std::size_t begin, std::size_t end) {
        Model<T> local = model;
        ParamSet<T> local_params = collect_params(local);
        auto& report = worker_reports[static_cast<std::size_t>(w)];
        report.assign(entry_count, {});
        std::size_t e = 0;
        for (std::size_t flat = begin; flat < end; ++flat) {
            while (prefix[e + 1] <= flat) ++e;
            const std::size_t i = flat - prefix[e];
            T* p = local_params.entries[e].data + i;
            const T old = *p;
            *p = old + static_cast<T>(h);
            const double lp = loss_fn(local);
            *p = old - static_cast<T>(h);
            const double lm = loss_fn(local);
            *p = old;
            const double fd = (lp - lm) / (2 * h);
            const double an = static_cast<double>(analytic.arrays[e][i]);
            const double diff = std::abs(an - fd);
            const double err =
                diff <= abs_floor ? 0.0 : diff / std::max(std::abs(an), std::abs(fd));
            if (err > report[e].max_rel_error || (report[e].analytic == 0 && report[e].numeric == 0)) {
                report[e].max_rel_error = err;
                report[e].worst_index = i;
                report[e].analytic = an;
                report[e].numeric = fd;
            }
        }
    });

    GradCheckReport out;
    out.params.assign(entry_count, {});
    for (std::size_t e = 0; e < entry_count; ++e) out.params[e].name = params.entries[e].name;
    for (const auto& report : worker_reports) {
        if (report.empty()) continue;
        for (std::size_t e = 0; e < entry_count; ++e) {
            const bool touched =
                report[e].max_rel_error > 0 || report[e].analytic != 0 || report[e].numeric != 0;
            if (!touched) continue;
            const bool empty_so_far =
                out.params[e].analytic == 0 && out.params[e].numeric == 0 &&
                out.params[e].max_rel_error == 0;
            if (report[e].max_rel_error > out.params[e].max_rel_error || empty_so_far) {
                out.params[e].max_rel_error = report[e].max_rel_error;
                out.params[e].worst_index = report[e].worst_index;
                out.params[e].analytic = report[e].analytic;
                out.params[e].numeric = report[e].numeric;
            }
        }
    }
    for (const auto& p : out.params) out.max_rel_error = std::max(out.max_rel_error, p.max_rel_error);
    out.pass = out.max_rel_error <= tolerance;
    return out;
}

}  // namespace tensorf
