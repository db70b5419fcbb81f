#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tensorf {

/// Small fixed 3-vector used for world positions, directions and colors.
template <typename T>
struct Vec3 {
    T x{}, y{}, z{};

    constexpr Vec3() = default;
    constexpr Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

    constexpr T operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator*(T s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(T s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3 operator*(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator*=(T s) { x *= s; y *= s; z *= s; return *this; }

    constexpr T dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    T norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const { T n = norm(); return {x / n, y / n, z / n}; }

    template <typename U>
    Vec3<U> cast() const { return {static_cast<U>(x), static_cast<U>(y), static_cast<U>(z)}; }

    bool operator==(const Vec3&) const = default;
};

template <typename T>
constexpr Vec3<T> operator*(T s, const Vec3<T>& v) { return v * s; }

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;
using Vec3i = Vec3<int>;

/// Axis-aligned box in world space.
template <typename T>
struct BBox {
    Vec3<T> min{}, max{};

    Vec3<T> extent() const { return max - min; }
    T diagonal() const { return extent().norm(); }
    bool contains(const Vec3<T>& p, T eps = T(0)) const {
        return p.x >= min.x - eps && p.x <= max.x + eps &&
               p.y >= min.y - eps && p.y <= max.y + eps &&
               p.z >= min.z - eps && p.z <= max.z + eps;
    }
    /// True when `other` lies inside this box (with slack for roundoff).
    bool covers(const BBox& other, T eps = T(0)) const {
        return contains(other.min, eps) && contains(other.max, eps);
    }

    template <typename U>
    BBox<U> cast() const { return {min.template cast<U>(), max.template cast<U>()}; }

    bool operator==(const BBox&) const = default;
};

using BBoxf = BBox<float>;
using BBoxd = BBox<double>;

template <typename T>
constexpr T lerp(T a, T b, T t) { return a + (b - a) * t; }

/// Numerically stable softplus, ln(1 + e^x).
template <typename T>
inline T softplus(T x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0));
}

template <typename T>
inline T logistic(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// SplitMix64: tiny counter-style generator used where a reproducible,
/// platform-independent stream is needed (per-ray jitter, shuffles).
inline std::uint64_t splitmix64(std::uint64_t state) {
    std::uint64_t z = state + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from a hashed counter.
inline double hash_uniform(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace tensorf
