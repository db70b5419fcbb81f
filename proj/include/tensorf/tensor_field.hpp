#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "tensorf/grid.hpp"

namespace tensorf {

enum class FieldMode : int { CP = 0, VM = 1 };

/// One factor vector of a tensor component, tied to a grid axis.
template <typename T>
struct VectorFactor {
    Axis axis;
    std::vector<T> values;  // length = grid resolution along `axis`
};

/// One factor matrix of a vector-matrix component, tied to a coordinate plane.
/// Row index runs along the plane's first axis, column index along its second
/// (YZ -> rows y, cols z), stored row-major.
template <typename T>
struct MatrixFactor {
    Plane plane;
    int rows = 0, cols = 0;
    std::vector<T> values;  // rows * cols, row-major
};

/// Components of one axis type stored interleaved: entry (i, r) of the packed
/// vector block lives at values[i * count + r]. The interleaving keeps all
/// components of a node adjacent, which is what the sampling loops want.
template <typename T>
struct PackedVectors {
    int n = 0;      // nodes along the axis
    int count = 0;  // number of components R
    std::vector<T> values;

    T& at(int i, int r) { return values[static_cast<std::size_t>(i) * count + r]; }
    T at(int i, int r) const { return values[static_cast<std::size_t>(i) * count + r]; }
};

template <typename T>
struct PackedMatrices {
    int n0 = 0, n1 = 0;  // nodes along the plane's two axes
    int count = 0;
    std::vector<T> values;  // (n0 * n1) * count, node-major, component-fastest

    T& at(int a0, int a1, int r) {
        return values[(static_cast<std::size_t>(a0) * n1 + a1) * count + r];
    }
    T at(int a0, int a1, int r) const {
        return values[(static_cast<std::size_t>(a0) * n1 + a1) * count + r];
    }
};

namespace detail {

/// Linear interpolation setup along one axis: clamped base node and weights.
template <typename T>
struct LinTap {
    int i0;
    T w0, w1;
};

template <typename T>
inline LinTap<T> lin_tap(T u, int n) {
    u = std::clamp(u, T(0), T(n - 1));
    int i0 = static_cast<int>(u);
    if (i0 > n - 2) i0 = n - 2;
    const T t = u - static_cast<T>(i0);
    return {i0, T(1) - t, t};
}

/// out[r] = linear interpolation of component r at continuous index u.
template <typename T>
inline void interp_vectors(const PackedVectors<T>& v, T u, T* out) {
    const auto tap = lin_tap(u, v.n);
    const T* a = v.values.data() + static_cast<std::size_t>(tap.i0) * v.count;
    const T* b = a + v.count;
    for (int r = 0; r < v.count; ++r) out[r] = a[r] * tap.w0 + b[r] * tap.w1;
}

/// out[r] = bilinear interpolation of component r at continuous indices (u0, u1).
template <typename T>
inline void interp_matrices(const PackedMatrices<T>& m, T u0, T u1, T* out) {
    const auto t0 = lin_tap(u0, m.n0);
    const auto t1 = lin_tap(u1, m.n1);
    const std::size_t row = static_cast<std::size_t>(m.n1) * m.count;
    const T* p00 = m.values.data() + static_cast<std::size_t>(t0.i0) * row +
                   static_cast<std::size_t>(t1.i0) * m.count;
    const T* p01 = p00 + m.count;
    const T* p10 = p00 + row;
    const T* p11 = p10 + m.count;
    const T w00 = t0.w0 * t1.w0, w01 = t0.w0 * t1.w1;
    const T w10 = t0.w1 * t1.w0, w11 = t0.w1 * t1.w1;
    for (int r = 0; r < m.count; ++r)
        out[r] = p00[r] * w00 + p01[r] * w01 + p10[r] * w10 + p11[r] * w11;
}

template <typename T>
inline PackedVectors<T> resample_vectors(const PackedVectors<T>& v, int new_n,
                                         auto&& old_index_of_new_node) {
    PackedVectors<T> out{new_n, v.count,
                         std::vector<T>(static_cast<std::size_t>(new_n) * v.count)};
    for (int i = 0; i < new_n; ++i) {
        const auto tap = lin_tap<T>(static_cast<T>(old_index_of_new_node(i)), v.n);
        const T* a = v.values.data() + static_cast<std::size_t>(tap.i0) * v.count;
        const T* b = a + v.count;
        T* o = out.values.data() + static_cast<std::size_t>(i) * v.count;
        for (int r = 0; r < v.count; ++r) o[r] = a[r] * tap.w0 + b[r] * tap.w1;
    }
    return out;
}

template <typename T>
inline PackedMatrices<T> resample_matrices(const PackedMatrices<T>& m, int new_n0, int new_n1,
                                           auto&& old_index0, auto&& old_index1) {
    PackedMatrices<T> out{new_n0, new_n1, m.count,
                          std::vector<T>(static_cast<std::size_t>(new_n0) * new_n1 * m.count)};
    for (int a0 = 0; a0 < new_n0; ++a0) {
        const auto t0 = lin_tap<T>(static_cast<T>(old_index0(a0)), m.n0);
        for (int a1 = 0; a1 < new_n1; ++a1) {
            const auto t1 = lin_tap<T>(static_cast<T>(old_index1(a1)), m.n1);
            const std::size_t row = static_cast<std::size_t>(m.n1) * m.count;
            const T* p00 = m.values.data() + static_cast<std::size_t>(t0.i0) * row +
                           static_cast<std::size_t>(t1.i0) * m.count;
            T* o = out.values.data() +
                   (static_cast<std::size_t>(a0) * new_n1 + a1) * m.count;
            const T w00 = t0.w0 * t1.w0, w01 = t0.w0 * t1.w1;
            const T w10 = t0.w1 * t1.w0, w11 = t0.w1 * t1.w1;
            for (int r = 0; r < m.count; ++r)
                o[r] = p00[r] * w00 + p00[r + m.count] * w01 + p00[row + r] * w10 +
                       p00[row + r + m.count] * w11;
        }
    }
    return out;
}

}  // namespace detail

/// Factorized single-channel (density) grid. VM mode keeps, per axis type m,
/// a block of vectors along m paired with matrices on the complementary plane;
/// CP mode keeps three equally sized vector blocks forming rank-one triples.
template <typename T>
struct DensityField {
    FieldMode mode = FieldMode::VM;
    GridGeometry geom;
    std::array<PackedVectors<T>, 3> vectors;    // indexed by Axis
    std::array<PackedMatrices<T>, 3> matrices;  // indexed by plane_of(Axis); unused in CP

    int component_count(Axis m) const { return vectors[static_cast<int>(m)].count; }
    int total_components() const {
        if (mode == FieldMode::CP) return vectors[0].count;
        return vectors[0].count + vectors[1].count + vectors[2].count;
    }

    VectorFactor<T> vector_factor(Axis m, int r) const {
        const auto& v = vectors[static_cast<int>(m)];
        if (r < 0 || r >= v.count) throw std::out_of_range("vector_factor: component index");
        VectorFactor<T> f{m, std::vector<T>(v.n)};
        for (int i = 0; i < v.n; ++i) f.values[i] = v.at(i, r);
        return f;
    }
    MatrixFactor<T> matrix_factor(Axis m, int r) const {
        if (mode != FieldMode::VM) throw std::invalid_argument("matrix_factor: CP field has none");
        const auto& mm = matrices[static_cast<int>(m)];
        if (r < 0 || r >= mm.count) throw std::out_of_range("matrix_factor: component index");
        MatrixFactor<T> f{plane_of(m), mm.n0, mm.n1, std::vector<T>(std::size_t(mm.n0) * mm.n1)};
        for (int a0 = 0; a0 < mm.n0; ++a0)
            for (int a1 = 0; a1 < mm.n1; ++a1) f.values[std::size_t(a0) * mm.n1 + a1] = mm.at(a0, a1, r);
        return f;
    }
};

/// Factorized P-channel (appearance) grid: the spatial factors of a
/// DensityField plus the feature-mode matrix B (P x total components).
/// The stacked component vector orders all X-type components in ascending r,
/// then Y-type, then Z-type (CP: plain r order); B's columns follow the same order.
template <typename T>
struct AppearanceField {
    DensityField<T> spatial;
    int feature_count = 0;   // P
    std::vector<T> B;        // P x C_total, row-major

    int stacked_size() const { return spatial.total_components(); }
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

template <typename T>
inline PackedVectors<T> pack_vectors(Axis axis, const GridGeometry& g,
                                     const std::vector<std::vector<T>>& comps) {
    const int n = g.res(axis);
    PackedVectors<T> out{n, static_cast<int>(comps.size()),
                         std::vector<T>(static_cast<std::size_t>(n) * comps.size())};
    for (int r = 0; r < out.count; ++r) {
        if (static_cast<int>(comps[r].size()) != n)
            throw std::invalid_argument("vector factor length does not match axis resolution");
        for (int i = 0; i < n; ++i) out.at(i, r) = comps[r][i];
    }
    return out;
}

template <typename T>
inline PackedMatrices<T> pack_matrices(Plane plane, const GridGeometry& g,
                                       const std::vector<std::vector<T>>& comps) {
    const int n0 = g.res(plane_axis0(plane));
    const int n1 = g.res(plane_axis1(plane));
    PackedMatrices<T> out{n0, n1, static_cast<int>(comps.size()),
                          std::vector<T>(static_cast<std::size_t>(n0) * n1 * comps.size())};
    for (int r = 0; r < out.count; ++r) {
        if (comps[r].size() != static_cast<std::size_t>(n0) * n1)
            throw std::invalid_argument("matrix factor shape does not match plane resolutions");
        for (int a0 = 0; a0 < n0; ++a0)
            for (int a1 = 0; a1 < n1; ++a1)
                out.at(a0, a1, r) = comps[r][static_cast<std::size_t>(a0) * n1 + a1];
    }
    return out;
}

}  // namespace detail

/// One VM component: a vector along its axis type plus a row-major matrix on
/// the complementary plane.
template <typename T>
struct VmComponent {
    std::vector<T> vec;
    std::vector<T> mat;
};

template <typename T>
DensityField<T> make_vm_density(const GridGeometry& g,
                                const std::array<std::vector<VmComponent<T>>, 3>& per_type) {
    DensityField<T> f;
    f.mode = FieldMode::VM;
    f.geom = g;
    for (int m = 0; m < 3; ++m) {
        std::vector<std::vector<T>> vecs, mats;
        for (const auto& c : per_type[m]) {
            vecs.push_back(c.vec);
            mats.push_back(c.mat);
        }
        f.vectors[m] = detail::pack_vectors(static_cast<Axis>(m), g, vecs);
        f.matrices[m] = detail::pack_matrices(plane_of(static_cast<Axis>(m)), g, mats);
    }
    return f;
}

/// CP triples: one vector per axis for each component.
template <typename T>
DensityField<T> make_cp_density(const GridGeometry& g,
                                const std::vector<std::array<std::vector<T>, 3>>& triples) {
    DensityField<T> f;
    f.mode = FieldMode::CP;
    f.geom = g;
    for (int m = 0; m < 3; ++m) {
        std::vector<std::vector<T>> vecs;
        for (const auto& t : triples) vecs.push_back(t[m]);
        f.vectors[m] = detail::pack_vectors(static_cast<Axis>(m), g, vecs);
    }
    return f;
}

/// Random field with i.i.d. zero-mean normal entries. `counts` holds the
/// per-axis-type component counts (all equal for CP).
template <typename T>
DensityField<T> random_density_field(FieldMode mode, const GridGeometry& g, Vec3i counts,
                                     std::mt19937_64& rng, double sd = 0.1) {
    std::normal_distribution<double> dist(0.0, sd);
    DensityField<T> f;
    f.mode = mode;
    f.geom = g;
    if (mode == FieldMode::CP && !(counts.x == counts.y && counts.y == counts.z))
        throw std::invalid_argument("CP mode requires equal per-axis counts");
    for (int m = 0; m < 3; ++m) {
        const Axis axis = static_cast<Axis>(m);
        auto& v = f.vectors[m];
        v.n = g.res(axis);
        v.count = counts[m];
        v.values.resize(static_cast<std::size_t>(v.n) * v.count);
        for (auto& x : v.values) x = static_cast<T>(dist(rng));
        if (mode == FieldMode::VM) {
            auto& mm = f.matrices[m];
            mm.n0 = g.res(plane_axis0(plane_of(axis)));
            mm.n1 = g.res(plane_axis1(plane_of(axis)));
            mm.count = counts[m];
            mm.values.resize(static_cast<std::size_t>(mm.n0) * mm.n1 * mm.count);
            for (auto& x : mm.values) x = static_cast<T>(dist(rng));
        }
    }
    return f;
}

template <typename T>
AppearanceField<T> random_appearance_field(FieldMode mode, const GridGeometry& g, Vec3i counts,
                                           int feature_count, std::mt19937_64& rng,
                                           double sd = 0.1) {
    AppearanceField<T> f;
    f.spatial = random_density_field<T>(mode, g, counts, rng, sd);
    f.feature_count = feature_count;
    std::normal_distribution<double> dist(0.0, sd);
    f.B.resize(static_cast<std::size_t>(feature_count) * f.spatial.total_components());
    for (auto& x : f.B) x = static_cast<T>(dist(rng));
    return f;
}

// ---------------------------------------------------------------------------
// Element evaluation

template <typename T>
T cp_element(const DensityField<T>& f, int i, int j, int k) {
    if (f.mode != FieldMode::CP) throw std::invalid_argument("cp_element: field is not CP");
    const auto& vx = f.vectors[0];
    const auto& vy = f.vectors[1];
    const auto& vz = f.vectors[2];
    if (i < 0 || i >= vx.n || j < 0 || j >= vy.n || k < 0 || k >= vz.n)
        throw std::out_of_range("cp_element: index out of range");
    T sum = 0;
    for (int r = 0; r < vx.count; ++r) sum += vx.at(i, r) * vy.at(j, r) * vz.at(k, r);
    return sum;
}

template <typename T>
T vm_element(const DensityField<T>& f, int i, int j, int k) {
    if (f.mode != FieldMode::VM) throw std::invalid_argument("vm_element: field is not VM");
    const Vec3i idx{i, j, k};
    const auto& g = f.geom;
    if (i < 0 || i >= g.resolution.x || j < 0 || j >= g.resolution.y || k < 0 ||
        k >= g.resolution.z)
        throw std::out_of_range("vm_element: index out of range");
    T sum = 0;
    for (int m = 0; m < 3; ++m) {
        const Plane p = plane_of(static_cast<Axis>(m));
        const int a0 = idx[static_cast<int>(plane_axis0(p))];
        const int a1 = idx[static_cast<int>(plane_axis1(p))];
        const auto& v = f.vectors[m];
        const auto& mm = f.matrices[m];
        for (int r = 0; r < v.count; ++r) sum += v.at(idx[m], r) * mm.at(a0, a1, r);
    }
    return sum;
}

template <typename T>
T element(const DensityField<T>& f, int i, int j, int k) {
    return f.mode == FieldMode::CP ? cp_element(f, i, j, k) : vm_element(f, i, j, k);
}

// ---------------------------------------------------------------------------
// Continuous sampling

/// Interpolated scalar of every component at `p`, written to `out` in the
/// documented stacking order (X block, Y block, Z block; CP: r order).
/// `out` must hold total_components() values. This is the shared kernel behind
/// both density summation and appearance feature stacking.
template <typename T>
void sample_components(const DensityField<T>& f, const SamplePoint<T>& p, T* out) {
    if (f.mode == FieldMode::CP) {
        const int R = f.vectors[0].count;
        // Three linear interpolations per component, multiplied.
        thread_local std::vector<T> tmp;
        tmp.resize(static_cast<std::size_t>(R) * 3);
        for (int m = 0; m < 3; ++m)
            detail::interp_vectors(f.vectors[m], p.index[m], tmp.data() + std::size_t(m) * R);
        for (int r = 0; r < R; ++r) out[r] = tmp[r] * tmp[R + r] * tmp[2 * R + r];
        return;
    }
    int offset = 0;
    for (int m = 0; m < 3; ++m) {
        const Plane pl = plane_of(static_cast<Axis>(m));
        const int R = f.vectors[m].count;
        thread_local std::vector<T> tmp;
        tmp.resize(static_cast<std::size_t>(R) * 2);
        detail::interp_vectors(f.vectors[m], p.index[m], tmp.data());
        detail::interp_matrices(f.matrices[m], p.index[static_cast<int>(plane_axis0(pl))],
                                p.index[static_cast<int>(plane_axis1(pl))], tmp.data() + R);
        for (int r = 0; r < R; ++r) out[offset + r] = tmp[r] * tmp[R + r];
        offset += R;
    }
}

/// Trilinearly interpolated density at `p` (raw, before any activation).
template <typename T>
T sample_density(const DensityField<T>& f, const SamplePoint<T>& p) {
    thread_local std::vector<T> comps;
    comps.resize(f.total_components());
    sample_components(f, p, comps.data());
    T sum = 0;
    for (const T c : comps) sum += c;
    return sum;
}

/// features = B * stacked interpolated components; `features` must hold P values.
template <typename T>
void sample_appearance(const AppearanceField<T>& f, const SamplePoint<T>& p, T* features) {
    const int C = f.stacked_size();
    thread_local std::vector<T> stacked;
    stacked.resize(C);
    sample_components(f.spatial, p, stacked.data());
    for (int c = 0; c < f.feature_count; ++c) {
        const T* row = f.B.data() + static_cast<std::size_t>(c) * C;
        T sum = 0;
        for (int r = 0; r < C; ++r) sum += row[r] * stacked[r];
        features[c] = sum;
    }
}

template <typename T>
std::vector<T> sample_appearance(const AppearanceField<T>& f, const SamplePoint<T>& p) {
    std::vector<T> out(f.feature_count);
    sample_appearance(f, p, out.data());
    return out;
}

/// Feature vector of the grid node (i, j, k), the direct 1D slice of the 4D tensor.
template <typename T>
std::vector<T> feature_element(const AppearanceField<T>& f, int i, int j, int k) {
    const int C = f.stacked_size();
    std::vector<T> stacked(C);
    const SamplePoint<T> p{{}, {static_cast<T>(i), static_cast<T>(j), static_cast<T>(k)}};
    // Node-exact: integer continuous indices hit the nodes exactly.
    if (i < 0 || i >= f.spatial.geom.resolution.x || j < 0 || j >= f.spatial.geom.resolution.y ||
        k < 0 || k >= f.spatial.geom.resolution.z)
        throw std::out_of_range("feature_element: index out of range");
    sample_components(f.spatial, p, stacked.data());
    std::vector<T> out(f.feature_count);
    for (int c = 0; c < f.feature_count; ++c) {
        const T* row = f.B.data() + static_cast<std::size_t>(c) * C;
        T sum = 0;
        for (int r = 0; r < C; ++r) sum += row[r] * stacked[r];
        out[c] = sum;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

/// Linear / bilinear upsampling of all factors to a higher resolution over the
/// same bbox. Align-corners: node 0 and node n-1 stay on the bbox faces, so
/// new = 2*old - 1 preserves every original node value exactly.
template <typename T>
DensityField<T> upsample(const DensityField<T>& f, const Vec3i& new_resolution) {
    for (int a = 0; a < 3; ++a) {
        if (new_resolution[a] < f.geom.resolution[a])
            throw std::invalid_argument("upsample: new resolution must be >= old (use resample_bbox to shrink)");
    }
    DensityField<T> out;
    out.mode = f.mode;
    out.geom = GridGeometry(f.geom.bbox, new_resolution);
    for (int m = 0; m < 3; ++m) {
        const Axis axis = static_cast<Axis>(m);
        const int old_n = f.geom.res(axis);
        const int new_n = out.geom.res(axis);
        auto map1 = [&](int i) { return double(i) * double(old_n - 1) / double(new_n - 1); };
        out.vectors[m] = detail::resample_vectors(f.vectors[m], new_n, map1);
        if (f.mode == FieldMode::VM) {
            const Plane pl = plane_of(axis);
            const Axis a0 = plane_axis0(pl), a1 = plane_axis1(pl);
            const int old0 = f.geom.res(a0), new0 = out.geom.res(a0);
            const int old1 = f.geom.res(a1), new1 = out.geom.res(a1);
            out.matrices[m] = detail::resample_matrices(
                f.matrices[m], new0, new1,
                [&](int i) { return double(i) * double(old0 - 1) / double(new0 - 1); },
                [&](int i) { return double(i) * double(old1 - 1) / double(new1 - 1); });
        }
    }
    return out;
}

template <typename T>
AppearanceField<T> upsample(const AppearanceField<T>& f, const Vec3i& new_resolution) {
    return {upsample(f.spatial, new_resolution), f.feature_count, f.B};
}

/// Re-evaluate all factors at the node positions of a new grid geometry whose
/// bbox must lie inside the old one. Used for the bounding-box shrink.
template <typename T>
DensityField<T> resample_bbox(const DensityField<T>& f, const BBoxd& new_bbox,
                              const Vec3i& new_resolution) {
    const double eps = 1e-9 * f.geom.bbox.diagonal();
    if (!f.geom.bbox.covers(new_bbox, eps))
        throw std::invalid_argument("resample_bbox: new bbox must lie inside the old bbox");
    DensityField<T> out;
    out.mode = f.mode;
    out.geom = GridGeometry(new_bbox, new_resolution);
    for (int m = 0; m < 3; ++m) {
        const Axis axis = static_cast<Axis>(m);
        auto old_index = [&](Axis a) {
            return [&f, &out, a](int i) { return f.geom.to_index(a, out.geom.node_position(a, i)); };
        };
        out.vectors[m] = detail::resample_vectors(f.vectors[m], out.geom.res(axis), old_index(axis));
        if (f.mode == FieldMode::VM) {
            const Plane pl = plane_of(axis);
            out.matrices[m] = detail::resample_matrices(
                f.matrices[m], out.geom.res(plane_axis0(pl)), out.geom.res(plane_axis1(pl)),
                old_index(plane_axis0(pl)), old_index(plane_axis1(pl)));
        }
    }
    return out;
}

template <typename T>
AppearanceField<T> resample_bbox(const AppearanceField<T>& f, const BBoxd& new_bbox,
                                 const Vec3i& new_resolution) {
    return {resample_bbox(f.spatial, new_bbox, new_resolution), f.feature_count, f.B};
}

// ---------------------------------------------------------------------------
// Accounting

template <typename T>
std::size_t parameter_count(const DensityField<T>& f) {
    std::size_t n = 0;
    for (int m = 0; m < 3; ++m) {
        n += f.vectors[m].values.size();
        n += f.matrices[m].values.size();
    }
    return n;
}

/// Total real parameters across density factors, appearance factors and B.
template <typename T>
std::size_t parameter_count(const DensityField<T>& density, const AppearanceField<T>& appearance) {
    return parameter_count(density) + parameter_count(appearance.spatial) + appearance.B.size();
}

/// Parameter count of the equivalent dense grid with P feature channels plus
/// one density channel.
inline std::size_t dense_parameter_count(const GridGeometry& g, int feature_count) {
    return static_cast<std::size_t>(g.resolution.x) * g.resolution.y * g.resolution.z *
           (feature_count + 1);
}

}  // namespace tensorf
