#pragma once

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "tensorf/common.hpp"

namespace tensorf {

/// Nonnegative density from a raw grid value: softplus(raw + shift).
/// shift defaults to 0; a negative shift (e.g. -10) makes a zero-initialized
/// field start near transparent.
template <typename T>
inline T density_activation(T raw, T shift = T(0)) {
    return softplus(raw + shift);
}

template <typename T>
inline T density_activation_grad(T raw, T shift = T(0)) {
    return logistic(raw + shift);
}

// ---------------------------------------------------------------------------
// Frequency encoding

/// Writes [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)]
/// to `out` (n * (1 + 2L) values). L = 0 copies v through unchanged.
template <typename T>
inline void freq_encode(const T* v, int n, int L, T* out) {
    for (int i = 0; i < n; ++i) out[i] = v[i];
    T freq = static_cast<T>(M_PI);
    for (int l = 0; l < L; ++l) {
        T* s = out + n + 2 * l * n;
        T* c = s + n;
        for (int i = 0; i < n; ++i) {
            s[i] = std::sin(freq * v[i]);
            c[i] = std::cos(freq * v[i]);
        }
        freq *= 2;
    }
}

template <typename T>
inline std::vector<T> freq_encode(const std::vector<T>& v, int L) {
    std::vector<T> out(v.size() * (1 + 2 * static_cast<std::size_t>(L)));
    freq_encode(v.data(), static_cast<int>(v.size()), L, out.data());
    return out;
}

/// Accumulates d(encoded)/d(v) pulled back through `dout` into `dv`.
template <typename T>
inline void freq_encode_backward(const T* v, int n, int L, const T* dout, T* dv) {
    for (int i = 0; i < n; ++i) dv[i] += dout[i];
    T freq = static_cast<T>(M_PI);
    for (int l = 0; l < L; ++l) {
        const T* ds = dout + n + 2 * l * n;
        const T* dc = ds + n;
        for (int i = 0; i < n; ++i) {
            dv[i] += freq * (std::cos(freq * v[i]) * ds[i] - std::sin(freq * v[i]) * dc[i]);
        }
        freq *= 2;
    }
}

// ---------------------------------------------------------------------------
// Spherical harmonics decoder

inline constexpr int kShBasisCount = 9;

/// Real spherical harmonics for bands l = 0..2 in (l, m) lexicographic order,
/// with the usual graphics normalization constants. The direction is
/// normalized internally, so callers may pass an approximately unit vector.
template <typename T>
inline void sh_basis(const Vec3<T>& d, T* out) {
    const Vec3<T> n = d.normalized();
    const T x = n.x, y = n.y, z = n.z;
    out[0] = T(0.28209479177387814);
    out[1] = T(0.48860251190291987) * y;
    out[2] = T(0.48860251190291987) * z;
    out[3] = T(0.48860251190291987) * x;
    out[4] = T(1.0925484305920792) * x * y;
    out[5] = T(1.0925484305920792) * y * z;
    out[6] = T(0.31539156525252005) * (T(3) * z * z - T(1));
    out[7] = T(1.0925484305920792) * x * z;
    out[8] = T(0.54627421529603959) * (x * x - y * y);
}

namespace detail {

/// Basis gradients with respect to the *normalized* direction components.
template <typename T>
inline void sh_basis_grad_unit(const Vec3<T>& n, Vec3<T>* dout) {
    const T x = n.x, y = n.y, z = n.z;
    const T c1 = T(0.48860251190291987);
    const T c2 = T(1.0925484305920792);
    const T c3 = T(0.31539156525252005);
    const T c4 = T(0.54627421529603959);
    dout[0] = {0, 0, 0};
    dout[1] = {0, c1, 0};
    dout[2] = {0, 0, c1};
    dout[3] = {c1, 0, 0};
    dout[4] = {c2 * y, c2 * x, 0};
    dout[5] = {0, c2 * z, c2 * y};
    dout[6] = {0, 0, c3 * T(6) * z};
    dout[7] = {c2 * z, 0, c2 * x};
    dout[8] = {c4 * T(2) * x, -c4 * T(2) * y, 0};
}

}  // namespace detail

/// Spherical-harmonics color decoder. `degree_count` SH bands give
/// degree_count^2 basis functions; feature width is 3 * degree_count^2
/// (layout: feature[3b + c] is the coefficient of basis b for channel c).
struct ShDecoder {
    int degree_count = 3;

    int basis_count() const { return degree_count * degree_count; }
    int feature_width() const { return 3 * basis_count(); }
};

/// RGB = logistic(sum_b feature[3b + c] * basis_b(d)).
template <typename T>
inline Vec3<T> decode_sh(const ShDecoder& dec, const T* features, const Vec3<T>& d) {
    if (dec.basis_count() != kShBasisCount)
        throw std::invalid_argument("decode_sh: only 3 SH bands (9 basis functions) are supported");
    T basis[kShBasisCount];
    sh_basis(d, basis);
    Vec3<T> rgb;
    for (int c = 0; c < 3; ++c) {
        T raw = 0;
        for (int b = 0; b < kShBasisCount; ++b) raw += features[3 * b + c] * basis[b];
        rgb[c] = logistic(raw);
    }
    return rgb;
}

template <typename T>
inline Vec3<T> decode_sh(const ShDecoder& dec, const std::vector<T>& features, const Vec3<T>& d) {
    if (static_cast<int>(features.size()) != dec.feature_width())
        throw std::invalid_argument("decode_sh: feature width mismatch");
    return decode_sh(dec, features.data(), d);
}

/// Reverse pass of decode_sh. Accumulates into `dfeatures` (27 values) and,
/// when non-null, `ddir` (gradient through the internal normalization).
template <typename T>
inline void decode_sh_backward(const ShDecoder& dec, const T* features, const Vec3<T>& d,
                               const Vec3<T>& drgb, T* dfeatures, Vec3<T>* ddir = nullptr) {
    T basis[kShBasisCount];
    sh_basis(d, basis);
    T draw[3];
    for (int c = 0; c < 3; ++c) {
        T raw = 0;
        for (int b = 0; b < kShBasisCount; ++b) raw += features[3 * b + c] * basis[b];
        const T s = logistic(raw);
        draw[c] = drgb[c] * s * (T(1) - s);
    }
    for (int b = 0; b < kShBasisCount; ++b)
        for (int c = 0; c < 3; ++c) dfeatures[3 * b + c] += draw[c] * basis[b];
    if (ddir) {
        const T len = d.norm();
        const Vec3<T> n = d / len;
        Vec3<T> dbasis[kShBasisCount];
        detail::sh_basis_grad_unit(n, dbasis);
        Vec3<T> dn{0, 0, 0};
        for (int b = 0; b < kShBasisCount; ++b) {
            T g = 0;
            for (int c = 0; c < 3; ++c) g += draw[c] * features[3 * b + c];
            dn += dbasis[b] * g;
        }
        // d(d/|d|)/dd = (I - n n^T) / |d|
        const T proj = dn.dot(n);
        *ddir += (dn - n * proj) / len;
    }
    (void)dec;
}

// ---------------------------------------------------------------------------
// MLP decoder

/// Two fully connected layers with a rectified-linear unit between them and a
/// logistic squash on the RGB output. Input is the frequency-encoded feature
/// vector concatenated with the frequency-encoded viewing direction; spatial
/// position is not an input.
template <typename T>
struct MlpDecoder {
    int feature_count = 27;
    int freq_count = 2;
    int hidden_width = 128;
    std::vector<T> W1, b1;  // hidden_width x input_width, row-major
    std::vector<T> W2, b2;  // 3 x hidden_width

    int encoded_feature_width() const { return feature_count * (1 + 2 * freq_count); }
    int input_width() const { return encoded_feature_width() + 3 * (1 + 2 * freq_count); }

    void allocate() {
        W1.assign(static_cast<std::size_t>(hidden_width) * input_width(), T(0));
        b1.assign(hidden_width, T(0));
        W2.assign(static_cast<std::size_t>(3) * hidden_width, T(0));
        b2.assign(3, T(0));
    }

    /// Xavier-uniform weights, zero biases.
    void init(std::mt19937_64& rng) {
        allocate();
        auto xavier = [&](std::vector<T>& w, int fan_in, int fan_out) {
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& x : w) x = static_cast<T>(dist(rng));
        };
        xavier(W1, input_width(), hidden_width);
        xavier(W2, hidden_width, 3);
    }
};

/// Scratch buffers reused across forward/backward calls on one thread.
template <typename T>
struct MlpWorkspace {
    std::vector<T> input;       // encoded input
    std::vector<T> hidden_pre;  // before the rectifier
    std::vector<T> raw;         // 3 pre-logistic outputs
    std::vector<T> dinput;
    std::vector<T> dhidden;
};

template <typename T>
inline Vec3<T> decode_mlp(const MlpDecoder<T>& mlp, const T* features, const Vec3<T>& d,
                          MlpWorkspace<T>& ws) {
    const int in_w = mlp.input_width();
    ws.input.resize(in_w);
    freq_encode(features, mlp.feature_count, mlp.freq_count, ws.input.data());
    const T dir[3] = {d.x, d.y, d.z};
    freq_encode(dir, 3, mlp.freq_count, ws.input.data() + mlp.encoded_feature_width());

    ws.hidden_pre.resize(mlp.hidden_width);
    for (int h = 0; h < mlp.hidden_width; ++h) {
        const T* row = mlp.W1.data() + static_cast<std::size_t>(h) * in_w;
        T sum = mlp.b1[h];
        for (int i = 0; i < in_w; ++i) sum += row[i] * ws.input[i];
        ws.hidden_pre[h] = sum;
    }
    ws.raw.assign(3, T(0));
    Vec3<T> rgb;
    for (int c = 0; c < 3; ++c) {
        const T* row = mlp.W2.data() + static_cast<std::size_t>(c) * mlp.hidden_width;
        T sum = mlp.b2[c];
        for (int h = 0; h < mlp.hidden_width; ++h)
            sum += row[h] * std::max(ws.hidden_pre[h], T(0));
        ws.raw[c] = sum;
        rgb[c] = logistic(sum);
    }
    return rgb;
}

template <typename T>
inline Vec3<T> decode_mlp(const MlpDecoder<T>& mlp, const std::vector<T>& features,
                          const Vec3<T>& d) {
    if (static_cast<int>(features.size()) != mlp.feature_count)
        throw std::invalid_argument("decode_mlp: feature width mismatch");
    MlpWorkspace<T> ws;
    return decode_mlp(mlp, features.data(), d, ws);
}

/// Parameter gradient arrays congruent with MlpDecoder's weights.
template <typename T>
struct MlpGrads {
    T* W1 = nullptr;
    T* b1 = nullptr;
    T* W2 = nullptr;
    T* b2 = nullptr;
};

/// Reverse pass. `ws` must hold the state of the immediately preceding
/// decode_mlp call for the same inputs. Accumulates parameter gradients into
/// `grads` and input gradients into `dfeatures` / `ddir` when non-null.
template <typename T>
inline void decode_mlp_backward(const MlpDecoder<T>& mlp, const T* features, const Vec3<T>& d,
                                MlpWorkspace<T>& ws, const Vec3<T>& drgb, MlpGrads<T> grads,
                                T* dfeatures, Vec3<T>* ddir) {
    const int in_w = mlp.input_width();
    const int hw = mlp.hidden_width;
    T draw[3];
    for (int c = 0; c < 3; ++c) {
        const T s = logistic(ws.raw[c]);
        draw[c] = drgb[c] * s * (T(1) - s);
    }
    ws.dinput.assign(in_w, T(0));
    ws.dhidden.assign(hw, T(0));
    // Through the second layer.
    for (int c = 0; c < 3; ++c) {
        const T* row = mlp.W2.data() + static_cast<std::size_t>(c) * hw;
        T* grow = grads.W2 ? grads.W2 + static_cast<std::size_t>(c) * hw : nullptr;
        for (int h = 0; h < hw; ++h) {
            const T act = std::max(ws.hidden_pre[h], T(0));
            if (grow) grow[h] += draw[c] * act;
            ws.dhidden[h] += draw[c] * row[h];
        }
        if (grads.b2) grads.b2[c] += draw[c];
    }
    // Through the rectifier and first layer.
    for (int h = 0; h < hw; ++h) {
        if (ws.hidden_pre[h] <= T(0)) continue;
        const T g = ws.dhidden[h];
        const T* row = mlp.W1.data() + static_cast<std::size_t>(h) * in_w;
        if (grads.W1) {
            T* grow = grads.W1 + static_cast<std::size_t>(h) * in_w;
            for (int i = 0; i < in_w; ++i) grow[i] += g * ws.input[i];
        }
        if (grads.b1) grads.b1[h] += g;
        for (int i = 0; i < in_w; ++i) ws.dinput[i] += g * row[i];
    }
    // Through the frequency encodings.
    if (dfeatures)
        freq_encode_backward(features, mlp.feature_count, mlp.freq_count, ws.dinput.data(),
                             dfeatures);
    if (ddir) {
        const T dir[3] = {d.x, d.y, d.z};
        T dd[3] = {0, 0, 0};
        freq_encode_backward(dir, 3, mlp.freq_count,
                             ws.dinput.data() + mlp.encoded_feature_width(), dd);
        ddir->x += dd[0];
        ddir->y += dd[1];
        ddir->z += dd[2];
    }
}

}  // namespace tensorf
