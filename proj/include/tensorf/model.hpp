#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensorf/decoders.hpp"
#include "tensorf/tensor_field.hpp"

namespace tensorf {

enum class DecoderKind { Sh, Mlp };

inline const char* decoder_kind_name(DecoderKind k) {
    return k == DecoderKind::Sh ? "sh" : "mlp";
}

inline DecoderKind decoder_kind_from_name(const std::string& name) {
    if (name == "sh") return DecoderKind::Sh;
    if (name == "mlp") return DecoderKind::Mlp;
    throw std::invalid_argument("unknown decoder kind: " + name);
}

/// Per-axis-type component counts for the density and appearance grids. CP
/// mode requires the three counts of a grid to be equal.
struct RankConfig {
    Vec3i density{8, 8, 8};
    Vec3i appearance{8, 8, 8};

    int density_total() const { return density.x + density.y + density.z; }
    int appearance_total() const { return appearance.x + appearance.y + appearance.z; }

    bool operator==(const RankConfig&) const = default;
};

/// The complete trainable state: both factorized grids and the color decoder.
template <typename T>
struct Model {
    DensityField<T> density;
    AppearanceField<T> appearance;
    DecoderKind decoder_kind = DecoderKind::Sh;
    ShDecoder sh;
    MlpDecoder<T> mlp;
    T density_shift = T(0);

    Vec3<T> decode(const T* features, const Vec3<T>& dir, MlpWorkspace<T>& ws) const {
        if (decoder_kind == DecoderKind::Sh) return decode_sh(sh, features, dir);
        return decode_mlp(mlp, features, dir, ws);
    }
};

using Modelf = Model<float>;
using Modeld = Model<double>;

template <typename T>
inline Model<T> make_model(FieldMode mode, DecoderKind decoder, const GridGeometry& geom,
                           const RankConfig& ranks, int feature_count, std::uint64_t seed) {
    Model<T> model;
    std::mt19937_64 rng(seed);
    model.density = random_density_field<T>(mode, geom, ranks.density, rng);
    model.appearance = random_appearance_field<T>(mode, geom, ranks.appearance, feature_count, rng);
    model.decoder_kind = decoder;
    if (decoder == DecoderKind::Sh) {
        if (feature_count != model.sh.feature_width())
            throw std::invalid_argument("make_model: SH decoder requires 27 features");
    } else {
        model.mlp.feature_count = feature_count;
        model.mlp.init(rng);
    }
    return model;
}

namespace detail {

template <typename To, typename From>
inline std::vector<To> convert_values(const std::vector<From>& in) {
    return std::vector<To>(in.begin(), in.end());
}

}  // namespace detail

template <typename To, typename From>
inline DensityField<To> convert_grid(const DensityField<From>& in) {
    DensityField<To> out;
    out.mode = in.mode;
    out.geom = in.geom;
    for (int m = 0; m < 3; ++m) {
        out.vectors[m] = {in.vectors[m].n, in.vectors[m].count,
                          detail::convert_values<To>(in.vectors[m].values)};
        out.matrices[m] = {in.matrices[m].n0, in.matrices[m].n1, in.matrices[m].count,
                           detail::convert_values<To>(in.matrices[m].values)};
    }
    return out;
}

template <typename To, typename From>
inline Model<To> convert_model(const Model<From>& in) {
    Model<To> out;
    out.density = convert_grid<To>(in.density);
    out.appearance = {convert_grid<To>(in.appearance.spatial), in.appearance.feature_count,
                      detail::convert_values<To>(in.appearance.B)};
    out.decoder_kind = in.decoder_kind;
    out.sh = in.sh;
    out.mlp.feature_count = in.mlp.feature_count;
    out.mlp.freq_count = in.mlp.freq_count;
    out.mlp.hidden_width = in.mlp.hidden_width;
    out.mlp.W1 = detail::convert_values<To>(in.mlp.W1);
    out.mlp.b1 = detail::convert_values<To>(in.mlp.b1);
    out.mlp.W2 = detail::convert_values<To>(in.mlp.W2);
    out.mlp.b2 = detail::convert_values<To>(in.mlp.b2);
    out.density_shift = static_cast<To>(in.density_shift);
    return out;
}

// ---------------------------------------------------------------------------
// Parameter registry

/// Learning-rate groups: grid factors train fast, the decoder (and the
/// feature-mode matrix B, which acts as a linear layer) trains slow.
enum class ParamGroup { Factors, Decoder };

template <typename T>
struct ParamRef {
    std::string name;
    T* data = nullptr;
    std::size_t size = 0;
    ParamGroup group = ParamGroup::Factors;
};

/// Flat registry of every trainable array, in a deterministic order. Entries
/// point into the model; re-collect after any operation that resizes arrays.
template <typename T>
struct ParamSet {
    std::vector<ParamRef<T>> entries;

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.size;
        return n;
    }

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name == name) return static_cast<int>(i);
        return -1;
    }
};

template <typename T>
inline void collect_grid_params(const std::string& prefix, DensityField<T>& grid,
                                ParamSet<T>& out) {
    static const char* axis_names[3] = {"x", "y", "z"};
    static const char* plane_names[3] = {"yz", "xz", "xy"};
    for (int m = 0; m < 3; ++m) {
        auto& vec = grid.vectors[m];
        if (vec.count == 0) continue;
        out.entries.push_back({prefix + ".vec." + axis_names[m], vec.values.data(),
                               vec.values.size(), ParamGroup::Factors});
    }
    if (grid.mode == FieldMode::VM) {
        for (int m = 0; m < 3; ++m) {
            auto& mat = grid.matrices[m];
            if (mat.count == 0) continue;
            out.entries.push_back({prefix + ".mat." + plane_names[m], mat.values.data(),
                                   mat.values.size(), ParamGroup::Factors});
        }
    }
}

template <typename T>
inline ParamSet<T> collect_params(Model<T>& model) {
    ParamSet<T> out;
    collect_grid_params("density", model.density, out);
    collect_grid_params("appearance", model.appearance.spatial, out);
    out.entries.push_back({"appearance.B", model.appearance.B.data(), model.appearance.B.size(),
                           ParamGroup::Decoder});
    if (model.decoder_kind == DecoderKind::Mlp) {
        out.entries.push_back(
            {"mlp.W1", model.mlp.W1.data(), model.mlp.W1.size(), ParamGroup::Decoder});
        out.entries.push_back(
            {"mlp.b1", model.mlp.b1.data(), model.mlp.b1.size(), ParamGroup::Decoder});
        out.entries.push_back(
            {"mlp.W2", model.mlp.W2.data(), model.mlp.W2.size(), ParamGroup::Decoder});
        out.entries.push_back(
            {"mlp.b2", model.mlp.b2.data(), model.mlp.b2.size(), ParamGroup::Decoder});
    }
    return out;
}

/// Gradient accumulators congruent with a ParamSet.
template <typename T>
struct GradSet {
    std::vector<std::vector<T>> arrays;

    GradSet() = default;

    explicit GradSet(const ParamSet<T>& params) { resize(params); }

    void resize(const ParamSet<T>& params) {
        arrays.resize(params.entries.size());
        for (std::size_t i = 0; i < arrays.size(); ++i) arrays[i].assign(params.entries[i].size, T(0));
    }

    void zero() {
        for (auto& a : arrays) std::fill(a.begin(), a.end(), T(0));
    }

    void accumulate(const GradSet& other) {
        for (std::size_t i = 0; i < arrays.size(); ++i) {
            const auto& src = other.arrays[i];
            auto& dst = arrays[i];
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    }

    T* data(std::size_t entry) { return arrays[entry].data(); }
    const T* data(std::size_t entry) const { return arrays[entry].data(); }
};

// ---------------------------------------------------------------------------
// Resolution changes

template <typename T>
inline void upsample_model(Model<T>& model, const Vec3i& new_resolution) {
    model.density = upsample(model.density, new_resolution);
    model.appearance = upsample(model.appearance, new_resolution);
}

template <typename T>
inline void resample_model_bbox(Model<T>& model, const BBoxd& new_bbox,
                                const Vec3i& new_resolution) {
    model.density = resample_bbox(model.density, new_bbox, new_resolution);
    model.appearance = resample_bbox(model.appearance, new_bbox, new_resolution);
}

}  // namespace tensorf
