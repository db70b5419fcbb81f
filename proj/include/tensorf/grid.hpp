#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "tensorf/common.hpp"

namespace tensorf {

enum class Axis : int { X = 0, Y = 1, Z = 2 };

/// Coordinate plane spanned by the two axes complementary to a vector factor's
/// axis. Stored axes are ordered as named: YZ -> (Y, Z), XZ -> (X, Z), XY -> (X, Y).
enum class Plane : int { YZ = 0, XZ = 1, XY = 2 };

/// Plane paired with an axis in a vector-matrix component (X pairs with YZ, cyclically).
constexpr Plane plane_of(Axis a) { return static_cast<Plane>(static_cast<int>(a)); }

constexpr Axis plane_axis0(Plane p) {
    return p == Plane::YZ ? Axis::Y : Axis::X;
}
constexpr Axis plane_axis1(Plane p) {
    return p == Plane::XY ? Axis::Y : Axis::Z;
}

/// World-space placement of a voxel grid: bounding box plus per-axis node counts.
/// Grid nodes use the align-corners convention: node 0 and node n-1 lie on the
/// bbox faces, so continuous index u_a = (p_a - min_a) / (max_a - min_a) * (n_a - 1).
struct GridGeometry {
    BBoxd bbox;
    Vec3i resolution;  // nodes per axis, each >= 2

    GridGeometry() : bbox{{0, 0, 0}, {1, 1, 1}}, resolution{2, 2, 2} {}
    GridGeometry(const BBoxd& b, const Vec3i& res) : bbox(b), resolution(res) {
        validate();
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (!(bbox.min[a] < bbox.max[a]))
                throw std::invalid_argument("GridGeometry: bbox_min must be < bbox_max componentwise");
            if (resolution[a] < 2)
                throw std::invalid_argument("GridGeometry: resolution must be >= 2 per axis");
        }
    }

    int res(Axis a) const { return resolution[static_cast<int>(a)]; }

    /// Continuous index in [0, n_a - 1] for one world coordinate.
    template <typename T>
    T to_index(Axis a, T world) const {
        const int ai = static_cast<int>(a);
        const T lo = static_cast<T>(bbox.min[ai]);
        const T hi = static_cast<T>(bbox.max[ai]);
        return (world - lo) / (hi - lo) * static_cast<T>(resolution[ai] - 1);
    }

    template <typename T>
    Vec3<T> to_index(const Vec3<T>& world) const {
        return {to_index(Axis::X, world.x), to_index(Axis::Y, world.y), to_index(Axis::Z, world.z)};
    }

    /// World coordinate of grid node i along one axis.
    double node_position(Axis a, int i) const {
        const int ai = static_cast<int>(a);
        return lerp(bbox.min[ai], bbox.max[ai], double(i) / double(resolution[ai] - 1));
    }

    bool operator==(const GridGeometry&) const = default;
};

/// A world position together with its continuous grid index.
template <typename T>
struct SamplePoint {
    Vec3<T> position;
    Vec3<T> index;  // per-axis continuous index in [0, n_a - 1]

    static SamplePoint from_world(const GridGeometry& g, const Vec3<T>& p) {
        return {p, g.to_index(p)};
    }
};

/// Per-axis node counts for a total voxel budget, proportional to the bbox
/// extents so node spacing stays near isotropic. The product of the returned
/// counts approximates the budget; each count is at least 2.
inline Vec3i derive_resolution(const BBoxd& bbox, double voxel_budget) {
    const Vec3d e = bbox.extent();
    const double geo = std::cbrt(e.x * e.y * e.z);
    const double unit = std::cbrt(voxel_budget) / geo;
    Vec3i res;
    for (int a = 0; a < 3; ++a)
        res[a] = std::max(2, static_cast<int>(std::llround(e[a] * unit)));
    return res;
}

}  // namespace tensorf
