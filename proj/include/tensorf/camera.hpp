#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "tensorf/common.hpp"

namespace tensorf {

/// Row-major 4x4 homogeneous transform.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity() {
        Mat4 out;
        for (int i = 0; i < 4; ++i) out.m[static_cast<std::size_t>(5 * i)] = 1.0;
        return out;
    }

    double& at(int r, int c) { return m[static_cast<std::size_t>(4 * r + c)]; }
    double at(int r, int c) const { return m[static_cast<std::size_t>(4 * r + c)]; }

    Vec3d transform_point(const Vec3d& p) const {
        return {at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z + at(0, 3),
                at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z + at(1, 3),
                at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z + at(2, 3)};
    }

    Vec3d transform_vector(const Vec3d& v) const {
        return {at(0, 0) * v.x + at(0, 1) * v.y + at(0, 2) * v.z,
                at(1, 0) * v.x + at(1, 1) * v.y + at(1, 2) * v.z,
                at(2, 0) * v.x + at(2, 1) * v.y + at(2, 2) * v.z};
    }

    Vec3d translation() const { return {at(0, 3), at(1, 3), at(2, 3)}; }

    Mat4 operator*(const Mat4& o) const {
        Mat4 out;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
                double s = 0;
                for (int k = 0; k < 4; ++k) s += at(r, k) * o.at(k, c);
                out.at(r, c) = s;
            }
        return out;
    }

    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    Mat4 inverse() const {
        std::array<double, 32> a{};
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) a[static_cast<std::size_t>(8 * r + c)] = at(r, c);
            a[static_cast<std::size_t>(8 * r + 4 + r)] = 1.0;
        }
        for (int col = 0; col < 4; ++col) {
            int pivot = col;
            for (int r = col + 1; r < 4; ++r)
                if (std::abs(a[static_cast<std::size_t>(8 * r + col)]) >
                    std::abs(a[static_cast<std::size_t>(8 * pivot + col)]))
                    pivot = r;
            if (std::abs(a[static_cast<std::size_t>(8 * pivot + col)]) < 1e-12)
                throw std::runtime_error("Mat4::inverse: singular matrix");
            if (pivot != col)
                for (int c = 0; c < 8; ++c)
                    std::swap(a[static_cast<std::size_t>(8 * pivot + c)],
                              a[static_cast<std::size_t>(8 * col + c)]);
            const double inv = 1.0 / a[static_cast<std::size_t>(8 * col + col)];
            for (int c = 0; c < 8; ++c) a[static_cast<std::size_t>(8 * col + c)] *= inv;
            for (int r = 0; r < 4; ++r) {
                if (r == col) continue;
                const double f = a[static_cast<std::size_t>(8 * r + col)];
                if (f == 0.0) continue;
                for (int c = 0; c < 8; ++c)
                    a[static_cast<std::size_t>(8 * r + c)] -=
                        f * a[static_cast<std::size_t>(8 * col + c)];
            }
        }
        Mat4 out;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) out.at(r, c) = a[static_cast<std::size_t>(8 * r + 4 + c)];
        return out;
    }
};

/// Pinhole camera with a camera-to-world pose. Columns of the rotation block
/// are the camera's right, up, and backward axes; the camera looks along its
/// local -z.
struct Camera {
    int width = 0;
    int height = 0;
    double focal = 0.0;
    Mat4 pose = Mat4::identity();

    /// Largest absolute deviation of R^T R from the identity.
    double rotation_orthonormality_error() const {
        double worst = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double dot = 0;
                for (int k = 0; k < 3; ++k) dot += pose.at(k, i) * pose.at(k, j);
                worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
            }
        return worst;
    }
};

inline double focal_from_angle_x(double camera_angle_x, int width) {
    return 0.5 * width / std::tan(0.5 * camera_angle_x);
}

template <typename T>
struct Ray {
    Vec3<T> origin{};
    Vec3<T> direction{};  // unit norm
    T t_near = T(0);
    T t_far = T(0);
};

using Rayd = Ray<double>;
using Rayf = Ray<float>;

/// Ray through the center of pixel (px, py); fractional coordinates address
/// positions between pixel centers. The origin is the pose translation.
inline Rayd generate_ray(const Camera& cam, double px, double py) {
    if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
        throw std::out_of_range("generate_ray: pixel outside image bounds");
    const Vec3d dir_cam{(px + 0.5 - 0.5 * cam.width) / cam.focal,
                        -(py + 0.5 - 0.5 * cam.height) / cam.focal, -1.0};
    Rayd ray;
    ray.origin = cam.pose.translation();
    ray.direction = cam.pose.transform_vector(dir_cam).normalized();
    return ray;
}

/// Projects a world point back to pixel coordinates (the inverse of
/// generate_ray up to depth). Throws if the point is not in front of the
/// camera.
inline void project_point(const Camera& cam, const Vec3d& world, double& px, double& py) {
    const Vec3d p = cam.pose.inverse().transform_point(world);
    if (p.z >= 0) throw std::runtime_error("project_point: point behind camera");
    px = p.x / (-p.z) * cam.focal + 0.5 * cam.width - 0.5;
    py = -p.y / (-p.z) * cam.focal + 0.5 * cam.height - 0.5;
}

/// Normalized-device-coordinate warp for forward-facing scenes: after the
/// remap the viewing frustum from z = -near onward occupies the cube
/// [-1,1]^2 x [-1,1] in (x', y', z'), with z' -> 1 at infinity. The ray is
/// first advanced onto the near plane; the returned direction is normalized
/// with t_far scaled to compensate, so traversing t in [0, t_far] spans the
/// frustum.
inline Rayd ndc_transform(const Rayd& ray, int width, int height, double focal, double near) {
    const Vec3d& o0 = ray.origin;
    const Vec3d& d0 = ray.direction;
    if (d0.z >= 0) throw std::invalid_argument("ndc_transform: ray must head toward -z");
    const double t_shift = -(near + o0.z) / d0.z;
    const Vec3d o = o0 + d0 * std::max(t_shift, 0.0);

    const double ax = -focal / (0.5 * width);
    const double ay = -focal / (0.5 * height);
    const Vec3d o_ndc{ax * o.x / o.z, ay * o.y / o.z, 1.0 + 2.0 * near / o.z};
    const Vec3d d_ndc{ax * (d0.x / d0.z - o.x / o.z), ay * (d0.y / d0.z - o.y / o.z),
                      -2.0 * near / o.z};

    Rayd out;
    out.origin = o_ndc;
    const double len = d_ndc.norm();
    out.direction = d_ndc / len;
    out.t_near = 0.0;
    out.t_far = len;
    return out;
}

}  // namespace tensorf
