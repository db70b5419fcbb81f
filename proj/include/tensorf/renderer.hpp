#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tensorf/camera.hpp"
#include "tensorf/common.hpp"
#include "tensorf/decoders.hpp"
#include "tensorf/tensor_field.hpp"

namespace tensorf {

/// Entry/exit parameters of an axis-aligned box (slab method). The entry is
/// clamped to a small positive epsilon so rays starting inside the box march
/// from their origin. Returns nullopt on a miss.
template <typename T>
inline std::optional<std::pair<T, T>> clip_ray(const Ray<T>& ray, const BBox<T>& box) {
    T t0 = T(1e-6);
    T t1 = std::numeric_limits<T>::infinity();
    for (int a = 0; a < 3; ++a) {
        const T o = ray.origin[a];
        const T d = ray.direction[a];
        if (d == T(0)) {
            if (o < box.min[a] || o > box.max[a]) return std::nullopt;
            continue;
        }
        T ta = (box.min[a] - o) / d;
        T tb = (box.max[a] - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t0 >= t1) return std::nullopt;
    return std::make_pair(t0, t1);
}

/// Step size giving roughly half-voxel spacing along the bbox diagonal,
/// capped so no ray exceeds max_samples steps.
inline double nominal_step_size(const GridGeometry& geom, int max_samples = 2048) {
    const Vec3d ext = geom.bbox.extent();
    const Vec3d vox{ext.x / (geom.resolution.x - 1), ext.y / (geom.resolution.y - 1),
                    ext.z / (geom.resolution.z - 1)};
    const double diag_voxels =
        Vec3d{ext.x / vox.x, ext.y / vox.y, ext.z / vox.z}.norm();
    const double count = std::min<double>(std::ceil(diag_voxels / 0.5), max_samples);
    return geom.bbox.diagonal() / count;
}

/// Binary coarse grid marking cells whose alpha at the nominal step exceeds a
/// threshold; used to drop shading points in empty space.
struct OccupancyVolume {
    BBoxd bbox;
    Vec3i resolution{0, 0, 0};
    double alpha_threshold = 0.0;
    std::vector<std::uint8_t> bits;  // index (ix * ny + iy) * nz + iz

    std::size_t cell_index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * resolution.y + iy) * resolution.z + iz;
    }

    bool cell(int ix, int iy, int iz) const { return bits[cell_index(ix, iy, iz)] != 0; }

    /// Occupancy of the cell containing p; points outside the bbox are empty.
    bool occupied(const Vec3d& p) const {
        const Vec3d ext = bbox.extent();
        int idx[3];
        for (int a = 0; a < 3; ++a) {
            const double u = (p[a] - bbox.min[a]) / ext[a] * resolution[a];
            if (u < 0 || u > resolution[a]) return false;
            idx[a] = std::min(static_cast<int>(u), resolution[a] - 1);
        }
        return cell(idx[0], idx[1], idx[2]);
    }

    bool any_occupied() const {
        return std::any_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
    }

    std::size_t occupied_count() const {
        return static_cast<std::size_t>(
            std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
    }
};

inline Vec3i occupancy_resolution(const Vec3i& field_resolution, int cap = 128) {
    return {std::min(field_resolution.x, cap), std::min(field_resolution.y, cap),
            std::min(field_resolution.z, cap)};
}

/// Evaluates activated density at cell centers, marks cells whose alpha
/// 1 - exp(-sigma * step) exceeds the threshold, and dilates the occupied set
/// by one cell in every direction.
template <typename T>
inline OccupancyVolume update_occupancy(const DensityField<T>& field, const Vec3i& resolution,
                                        double alpha_threshold, double step_size,
                                        double density_shift = 0.0) {
    OccupancyVolume occ;
    occ.bbox = field.geom.bbox;
    occ.resolution = resolution;
    occ.alpha_threshold = alpha_threshold;
    const std::size_t total = static_cast<std::size_t>(resolution.x) * resolution.y * resolution.z;
    std::vector<std::uint8_t> raw(total, 0);
    const Vec3d ext = occ.bbox.extent();
    const Vec3d cell{ext.x / resolution.x, ext.y / resolution.y, ext.z / resolution.z};
    for (int ix = 0; ix < resolution.x; ++ix)
        for (int iy = 0; iy < resolution.y; ++iy)
            for (int iz = 0; iz < resolution.z; ++iz) {
                const Vec3d center{occ.bbox.min.x + (ix + 0.5) * cell.x,
                                   occ.bbox.min.y + (iy + 0.5) * cell.y,
                                   occ.bbox.min.z + (iz + 0.5) * cell.z};
                const T raw_density =
                    sample_density(field, SamplePoint<T>::from_world(field.geom, center.cast<T>()));
                const double sigma = density_activation(static_cast<double>(raw_density),
                                                        density_shift);
                const double alpha = 1.0 - std::exp(-sigma * step_size);
                if (alpha > alpha_threshold) raw[occ.cell_index(ix, iy, iz)] = 1;
            }
    occ.bits.assign(total, 0);
    for (int ix = 0; ix < resolution.x; ++ix)
        for (int iy = 0; iy < resolution.y; ++iy)
            for (int iz = 0; iz < resolution.z; ++iz) {
                bool on = false;
                for (int dx = -1; dx <= 1 && !on; ++dx)
                    for (int dy = -1; dy <= 1 && !on; ++dy)
                        for (int dz = -1; dz <= 1 && !on; ++dz) {
                            const int jx = ix + dx, jy = iy + dy, jz = iz + dz;
                            if (jx < 0 || jy < 0 || jz < 0 || jx >= resolution.x ||
                                jy >= resolution.y || jz >= resolution.z)
                                continue;
                            on = raw[occ.cell_index(jx, jy, jz)] != 0;
                        }
                if (on) occ.bits[occ.cell_index(ix, iy, iz)] = 1;
            }
    return occ;
}

/// Smallest axis-aligned box containing all occupied cells, padded by one
/// cell and clamped to the volume's bbox.
inline BBoxd tight_bbox(const OccupancyVolume& occ) {
    Vec3i lo{occ.resolution.x, occ.resolution.y, occ.resolution.z};
    Vec3i hi{-1, -1, -1};
    for (int ix = 0; ix < occ.resolution.x; ++ix)
        for (int iy = 0; iy < occ.resolution.y; ++iy)
            for (int iz = 0; iz < occ.resolution.z; ++iz) {
                if (!occ.cell(ix, iy, iz)) continue;
                lo.x = std::min(lo.x, ix);
                lo.y = std::min(lo.y, iy);
                lo.z = std::min(lo.z, iz);
                hi.x = std::max(hi.x, ix);
                hi.y = std::max(hi.y, iy);
                hi.z = std::max(hi.z, iz);
            }
    if (hi.x < 0) throw std::runtime_error("tight_bbox: occupancy volume is entirely empty");
    const Vec3d ext = occ.bbox.extent();
    const Vec3d cell{ext.x / occ.resolution.x, ext.y / occ.resolution.y,
                     ext.z / occ.resolution.z};
    BBoxd out;
    for (int a = 0; a < 3; ++a) {
        out.min[a] = std::max(occ.bbox.min[a] + (lo[a] - 1) * cell[a], occ.bbox.min[a]);
        out.max[a] = std::min(occ.bbox.min[a] + (hi[a] + 2) * cell[a], occ.bbox.max[a]);
    }
    return out;
}

/// Shading points along one clipped ray: parametric positions, per-step
/// sizes, and per-step density/color filled in by the pipeline.
template <typename T>
struct RenderSteps {
    std::vector<T> ts;
    std::vector<Vec3<T>> positions;
    std::vector<T> deltas;
    std::vector<T> sigmas;
    std::vector<Vec3<T>> colors;

    int count() const { return static_cast<int>(ts.size()); }

    void clear() {
        ts.clear();
        positions.clear();
        deltas.clear();
        sigmas.clear();
        colors.clear();
    }
};

/// Uniform parametric samples t = t_near + (q + jitter) * step for t < t_far,
/// dropping samples whose occupancy cell is empty. jitter is 0 in eval mode
/// and uniform in [0, 1) per ray in training mode.
template <typename T>
inline void sample_points(const Ray<T>& ray, T step_size, const OccupancyVolume* occupancy,
                          T jitter, RenderSteps<T>& out) {
    out.clear();
    if (step_size <= T(0)) throw std::invalid_argument("sample_points: step size must be positive");
    for (T t = ray.t_near + jitter * step_size; t < ray.t_far; t += step_size) {
        const Vec3<T> p = ray.origin + ray.direction * t;
        if (occupancy && !occupancy->occupied(p.template cast<double>())) continue;
        out.ts.push_back(t);
        out.positions.push_back(p);
        out.deltas.push_back(step_size);
    }
    out.sigmas.assign(out.ts.size(), T(0));
    out.colors.assign(out.ts.size(), Vec3<T>{});
}

template <typename T>
struct CompositeResult {
    Vec3<T> rgb{};
    T residual_tau = T(1);  // transmittance past the last sample
    T depth = T(0);         // sum of w_q * t_q, zero weight past the end
};

/// Front-to-back compositing with weights w_q = tau_q * alpha_q, tau updated
/// by the telescoping product, plus residual background light.
template <typename T>
inline CompositeResult<T> composite(const RenderSteps<T>& steps, const Vec3<T>& background,
                                    T termination_tau = T(0), T* weights_out = nullptr) {
    CompositeResult<T> res;
    T tau = T(1);
    const int q_count = steps.count();
    for (int q = 0; q < q_count; ++q) {
        if (termination_tau > T(0) && tau < termination_tau) {
            if (weights_out)
                for (int r = q; r < q_count; ++r) weights_out[r] = T(0);
            break;
        }
        const T alpha = -std::expm1(-steps.sigmas[q] * steps.deltas[q]);
        const T w = tau * alpha;
        res.rgb += steps.colors[q] * w;
        res.depth += steps.ts[q] * w;
        if (weights_out) weights_out[q] = w;
        tau *= T(1) - alpha;
    }
    res.residual_tau = tau;
    res.rgb += background * tau;
    return res;
}

template <typename T>
inline Vec3<T> volume_render(const RenderSteps<T>& steps, const Vec3<T>& background) {
    return composite(steps, background).rgb;
}

template <typename T>
struct RenderOptions {
    T step_size = T(0);
    Vec3<T> background{1, 1, 1};
    T density_shift = T(0);
    T alpha_cutoff = T(1e-4);      // skip appearance decoding below this alpha
    T termination_tau = T(1e-4);   // stop marching when transmittance falls below; 0 disables
    bool jitter = false;
    std::uint64_t jitter_seed = 0;
};

template <typename T>
struct PixelResult {
    Vec3<T> rgb{};
    T depth = T(0);
    T residual_tau = T(1);
    int sample_count = 0;
};

/// Scratch reused across rays on one thread.
template <typename T>
struct RenderScratch {
    RenderSteps<T> steps;
    std::vector<T> features;
};

/// Full forward pipeline for one ray: clip, sample, density, appearance,
/// decode, composite. `decode(features, direction)` maps a P-vector and the
/// ray direction to RGB. Samples whose alpha falls below the cutoff keep
/// their color at zero and are never decoded.
template <typename T, typename DecodeFn>
inline PixelResult<T> render_pixel(const DensityField<T>& density,
                                   const AppearanceField<T>& appearance, DecodeFn&& decode,
                                   const Ray<T>& ray, const RenderOptions<T>& opts,
                                   const OccupancyVolume* occupancy, T jitter,
                                   RenderScratch<T>& scratch) {
    PixelResult<T> out;
    Ray<T> clipped = ray;
    const auto span = clip_ray(ray, density.geom.bbox.template cast<T>());
    if (!span) {
        out.rgb = opts.background;
        return out;
    }
    clipped.t_near = span->first;
    clipped.t_far = span->second;
    sample_points(clipped, opts.step_size, occupancy, jitter, scratch.steps);
    auto& steps = scratch.steps;

    scratch.features.resize(static_cast<std::size_t>(appearance.feature_count));
    T tau = T(1);
    const int q_count = steps.count();
    for (int q = 0; q < q_count; ++q) {
        if (opts.termination_tau > T(0) && tau < opts.termination_tau) {
            steps.ts.resize(static_cast<std::size_t>(q));
            steps.positions.resize(static_cast<std::size_t>(q));
            steps.deltas.resize(static_cast<std::size_t>(q));
            steps.sigmas.resize(static_cast<std::size_t>(q));
            steps.colors.resize(static_cast<std::size_t>(q));
            break;
        }
        const auto sp = SamplePoint<T>::from_world(density.geom, steps.positions[q]);
        const T raw = sample_density(density, sp);
        const T sigma = density_activation(raw, opts.density_shift);
        steps.sigmas[q] = sigma;
        const T alpha = -std::expm1(-sigma * steps.deltas[q]);
        if (alpha > opts.alpha_cutoff) {
            sample_appearance(appearance, sp, scratch.features.data());
            steps.colors[q] = decode(scratch.features.data(), ray.direction);
        }
        tau *= T(1) - alpha;
    }
    const auto comp = composite(steps, opts.background, opts.termination_tau);
    out.rgb = comp.rgb;
    out.depth = comp.depth;
    out.residual_tau = comp.residual_tau;
    out.sample_count = steps.count();
    return out;
}

/// Per-ray jitter offset in [0, 1): deterministic in (seed, ray index).
inline double ray_jitter(std::uint64_t seed, std::uint64_t ray_index) {
    return hash_uniform(seed, ray_index, 0x6a17);
}

}  // namespace tensorf
