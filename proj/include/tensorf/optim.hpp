#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorf/model.hpp"
#include "tensorf/tensor_field.hpp"

namespace tensorf {

enum class RegKind { None, L1, TV };

inline const char* reg_kind_name(RegKind k) {
    switch (k) {
        case RegKind::None: return "none";
        case RegKind::L1: return "l1";
        case RegKind::TV: return "tv";
    }
    return "none";
}

inline RegKind reg_kind_from_name(const std::string& name) {
    if (name == "none") return RegKind::None;
    if (name == "l1") return RegKind::L1;
    if (name == "tv") return RegKind::TV;
    throw std::invalid_argument("unknown regularizer: " + name);
}

struct LossConfig {
    RegKind reg = RegKind::None;
    double weight = 0.0;                // omega
    double tv_appearance_scale = 0.1;   // extra weight on appearance difference terms
    bool tv_squared = false;            // squared-difference variant of the neighbor penalty

    bool operator==(const LossConfig&) const = default;
};

// ---------------------------------------------------------------------------
// L1 sparsity (density factors only)

/// Mean absolute value over every density factor element. The normalizer is
/// the total element count, which for symmetric VM ranks equals
/// R * (IJ + IK + JK + I + J + K) and for CP equals R * (I + J + K).
template <typename T>
inline double l1_reg(const DensityField<T>& f) {
    double sum = 0;
    std::size_t n = 0;
    for (int m = 0; m < 3; ++m) {
        for (const T x : f.vectors[m].values) sum += std::abs(static_cast<double>(x));
        for (const T x : f.matrices[m].values) sum += std::abs(static_cast<double>(x));
        n += f.vectors[m].values.size() + f.matrices[m].values.size();
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Accumulates scale * d(l1_reg)/d(theta) into gradient arrays congruent with
/// the density factors. Null pointers skip that block.
template <typename T>
inline void l1_reg_backward(const DensityField<T>& f, T scale, T* gvec[3], T* gmat[3]) {
    std::size_t n = 0;
    for (int m = 0; m < 3; ++m)
        n += f.vectors[m].values.size() + f.matrices[m].values.size();
    if (n == 0) return;
    const T s = scale / static_cast<T>(n);
    auto sign = [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); };
    for (int m = 0; m < 3; ++m) {
        if (gvec[m])
            for (std::size_t i = 0; i < f.vectors[m].values.size(); ++i)
                gvec[m][i] += s * sign(f.vectors[m].values[i]);
        if (gmat[m])
            for (std::size_t i = 0; i < f.matrices[m].values.size(); ++i)
                gmat[m][i] += s * sign(f.matrices[m].values[i]);
    }
}

// ---------------------------------------------------------------------------
// Total variation (density and appearance factors; B excluded)

namespace detail {

template <typename T>
inline void tv_accumulate_vector(const PackedVectors<T>& v, bool squared, double& sum,
                                 std::size_t& terms) {
    for (int r = 0; r < v.count; ++r)
        for (int i = 0; i + 1 < v.n; ++i) {
            const double d = static_cast<double>(v.at(i + 1, r)) - static_cast<double>(v.at(i, r));
            sum += squared ? d * d : std::abs(d);
            ++terms;
        }
}

template <typename T>
inline void tv_accumulate_matrix(const PackedMatrices<T>& m, bool squared, double& sum,
                                 std::size_t& terms) {
    for (int r = 0; r < m.count; ++r) {
        for (int a0 = 0; a0 + 1 < m.n0; ++a0)
            for (int a1 = 0; a1 < m.n1; ++a1) {
                const double d =
                    static_cast<double>(m.at(a0 + 1, a1, r)) - static_cast<double>(m.at(a0, a1, r));
                sum += squared ? d * d : std::abs(d);
                ++terms;
            }
        for (int a0 = 0; a0 < m.n0; ++a0)
            for (int a1 = 0; a1 + 1 < m.n1; ++a1) {
                const double d =
                    static_cast<double>(m.at(a0, a1 + 1, r)) - static_cast<double>(m.at(a0, a1, r));
                sum += squared ? d * d : std::abs(d);
                ++terms;
            }
    }
}

template <typename T>
inline void tv_count_and_sum(const DensityField<T>& f, bool squared, double& sum,
                             std::size_t& terms) {
    for (int m = 0; m < 3; ++m) {
        tv_accumulate_vector(f.vectors[m], squared, sum, terms);
        tv_accumulate_matrix(f.matrices[m], squared, sum, terms);
    }
}

template <typename T>
inline T tv_pair_grad(T a, T b, bool squared) {
    // d penalty(b - a) / db; caller negates for the a side.
    const T d = b - a;
    if (squared) return 2 * d;
    return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
}

template <typename T>
inline void tv_backward_vector(const PackedVectors<T>& v, T scale, bool squared, T* g) {
    if (!g) return;
    for (int r = 0; r < v.count; ++r)
        for (int i = 0; i + 1 < v.n; ++i) {
            const T d = tv_pair_grad(v.at(i, r), v.at(i + 1, r), squared) * scale;
            g[static_cast<std::size_t>(i + 1) * v.count + r] += d;
            g[static_cast<std::size_t>(i) * v.count + r] -= d;
        }
}

template <typename T>
inline void tv_backward_matrix(const PackedMatrices<T>& m, T scale, bool squared, T* g) {
    if (!g) return;
    auto idx = [&](int a0, int a1, int r) {
        return (static_cast<std::size_t>(a0) * m.n1 + a1) * m.count + r;
    };
    for (int r = 0; r < m.count; ++r) {
        for (int a0 = 0; a0 + 1 < m.n0; ++a0)
            for (int a1 = 0; a1 < m.n1; ++a1) {
                const T d = tv_pair_grad(m.at(a0, a1, r), m.at(a0 + 1, a1, r), squared) * scale;
                g[idx(a0 + 1, a1, r)] += d;
                g[idx(a0, a1, r)] -= d;
            }
        for (int a0 = 0; a0 < m.n0; ++a0)
            for (int a1 = 0; a1 + 1 < m.n1; ++a1) {
                const T d = tv_pair_grad(m.at(a0, a1, r), m.at(a0, a1 + 1, r), squared) * scale;
                g[idx(a0, a1 + 1, r)] += d;
                g[idx(a0, a1, r)] -= d;
            }
    }
}

}  // namespace detail

/// Mean neighbor-difference penalty over all factor arrays: |delta| by
/// default, delta^2 in the squared variant. Appearance terms are additionally
/// weighted (0.1 by default); the normalizer counts every difference term once.
template <typename T>
inline double tv_reg(const DensityField<T>& density, const AppearanceField<T>* appearance,
                     double appearance_scale = 0.1, bool squared = false) {
    double density_sum = 0, appearance_sum = 0;
    std::size_t terms = 0;
    detail::tv_count_and_sum(density, squared, density_sum, terms);
    if (appearance) detail::tv_count_and_sum(appearance->spatial, squared, appearance_sum, terms);
    if (terms == 0) return 0.0;
    return (density_sum + appearance_scale * appearance_sum) / static_cast<double>(terms);
}

/// Accumulates scale * d(tv_reg)/d(theta). Gradient array pointers follow the
/// factor layout; null entries are skipped.
template <typename T>
inline void tv_reg_backward(const DensityField<T>& density, const AppearanceField<T>* appearance,
                            T scale, double appearance_scale, bool squared, T* density_gvec[3],
                            T* density_gmat[3], T* appearance_gvec[3], T* appearance_gmat[3]) {
    double dummy_sum = 0;
    std::size_t terms = 0;
    detail::tv_count_and_sum(density, squared, dummy_sum, terms);
    if (appearance) detail::tv_count_and_sum(appearance->spatial, squared, dummy_sum, terms);
    if (terms == 0) return;
    const T base = scale / static_cast<T>(terms);
    for (int m = 0; m < 3; ++m) {
        detail::tv_backward_vector(density.vectors[m], base, squared, density_gvec[m]);
        detail::tv_backward_matrix(density.matrices[m], base, squared, density_gmat[m]);
        if (appearance) {
            const T app = base * static_cast<T>(appearance_scale);
            detail::tv_backward_vector(appearance->spatial.vectors[m], app, squared,
                                       appearance_gvec[m]);
            detail::tv_backward_matrix(appearance->spatial.matrices[m], app, squared,
                                       appearance_gmat[m]);
        }
    }
}

template <typename T>
inline double model_reg(const Model<T>& model, const LossConfig& cfg) {
    switch (cfg.reg) {
        case RegKind::None: return 0.0;
        case RegKind::L1: return l1_reg(model.density);
        case RegKind::TV:
            return tv_reg(model.density, &model.appearance, cfg.tv_appearance_scale,
                          cfg.tv_squared);
    }
    return 0.0;
}

inline double total_loss(double render_l2, double reg_value, double omega) {
    return render_l2 + omega * reg_value;
}

// ---------------------------------------------------------------------------
// Adam

/// Exponential decay from the initial rates down to final_factor of them at
/// step T, lr(t) = lr0 * final_factor^(t / T).
struct LrSchedule {
    double lr_factors = 0.02;
    double lr_decoder = 0.001;
    std::int64_t total_steps = 30000;
    double final_factor = 0.1;
};

struct LrPair {
    double factors;
    double decoder;
};

inline LrPair lr_at(std::int64_t t, const LrSchedule& s) {
    const double tt = std::min(std::max<std::int64_t>(t, 0), s.total_steps);
    const double decay =
        s.total_steps == 0 ? 1.0 : std::pow(s.final_factor, tt / static_cast<double>(s.total_steps));
    return {s.lr_factors * decay, s.lr_decoder * decay};
}

/// Standard bias-corrected Adam with per-entry step counters, so arrays that
/// get reset on a resolution change restart their correction schedule.
template <typename T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::vector<std::vector<T>> m, v;
    std::vector<std::int64_t> steps;

    void init(const ParamSet<T>& params) {
        m.resize(params.entries.size());
        v.resize(params.entries.size());
        steps.assign(params.entries.size(), 0);
        for (std::size_t i = 0; i < params.entries.size(); ++i) {
            m[i].assign(params.entries[i].size, T(0));
            v[i].assign(params.entries[i].size, T(0));
        }
    }

    /// Fresh moments for one entry after its array was resized.
    void reset_entry(std::size_t i, std::size_t size) {
        m[i].assign(size, T(0));
        v[i].assign(size, T(0));
        steps[i] = 0;
    }
};

template <typename T>
inline void adam_step(const ParamSet<T>& params, const GradSet<T>& grads, AdamState<T>& state,
                      double lr_factors, double lr_decoder) {
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        const auto& entry = params.entries[e];
        const double lr = entry.group == ParamGroup::Factors ? lr_factors : lr_decoder;
        const std::int64_t t = ++state.steps[e];
        const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
        const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
        T* th = entry.data;
        const T* g = grads.data(e);
        T* mm = state.m[e].data();
        T* vv = state.v[e].data();
        for (std::size_t i = 0; i < entry.size; ++i) {
            if (!std::isfinite(static_cast<double>(g[i])))
                throw std::runtime_error("adam_step: non-finite gradient in " + entry.name);
            mm[i] = b1 * mm[i] + (T(1) - b1) * g[i];
            vv[i] = b2 * vv[i] + (T(1) - b2) * g[i] * g[i];
            const double mhat = static_cast<double>(mm[i]) / c1;
            const double vhat = static_cast<double>(vv[i]) / c2;
            th[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace tensorf
