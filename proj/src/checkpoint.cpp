#include "tensorf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace tensorf {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'F', 'C'};
constexpr std::uint8_t kDtypeF32 = 0;

struct NamedArray {
    std::string name;
    std::vector<std::int64_t> dims;
    const float* data = nullptr;
    std::size_t size = 0;
};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    return v;
}

std::vector<NamedArray> model_arrays(const Model<float>& model) {
    static const char* axis_names[3] = {"x", "y", "z"};
    static const char* plane_names[3] = {"yz", "xz", "xy"};
    std::vector<NamedArray> arrays;
    auto add_grid = [&](const std::string& prefix, const DensityField<float>& grid) {
        for (int m = 0; m < 3; ++m) {
            const auto& vec = grid.vectors[m];
            if (vec.count == 0) continue;
            arrays.push_back({prefix + ".vec." + axis_names[m],
                              {vec.n, vec.count},
                              vec.values.data(),
                              vec.values.size()});
        }
        for (int m = 0; m < 3; ++m) {
            const auto& mat = grid.matrices[m];
            if (mat.count == 0) continue;
            arrays.push_back({prefix + ".mat." + plane_names[m],
                              {mat.n0, mat.n1, mat.count},
                              mat.values.data(),
                              mat.values.size()});
        }
    };
    add_grid("density", model.density);
    add_grid("appearance", model.appearance.spatial);
    arrays.push_back({"appearance.B",
                      {model.appearance.feature_count, model.appearance.stacked_size()},
                      model.appearance.B.data(),
                      model.appearance.B.size()});
    if (model.decoder_kind == DecoderKind::Mlp) {
        const auto& mlp = model.mlp;
        arrays.push_back({"mlp.W1",
                          {mlp.hidden_width, mlp.input_width()},
                          mlp.W1.data(),
                          mlp.W1.size()});
        arrays.push_back({"mlp.b1", {mlp.hidden_width}, mlp.b1.data(), mlp.b1.size()});
        arrays.push_back({"mlp.W2", {3, mlp.hidden_width}, mlp.W2.data(), mlp.W2.size()});
        arrays.push_back({"mlp.b2", {3}, mlp.b2.data(), mlp.b2.size()});
    }
    return arrays;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);

    out.write(kMagic, 4);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint8_t>(model.density.mode));
    write_pod(out, static_cast<std::uint8_t>(model.decoder_kind));
    write_pod(out, static_cast<std::int32_t>(model.appearance.feature_count));
    for (int m = 0; m < 3; ++m)
        write_pod(out, static_cast<std::int32_t>(model.density.vectors[m].count));
    for (int m = 0; m < 3; ++m)
        write_pod(out, static_cast<std::int32_t>(model.appearance.spatial.vectors[m].count));
    const auto& geom = model.density.geom;
    for (int a = 0; a < 3; ++a) write_pod(out, geom.bbox.min[a]);
    for (int a = 0; a < 3; ++a) write_pod(out, geom.bbox.max[a]);
    for (int a = 0; a < 3; ++a) write_pod(out, static_cast<std::int32_t>(geom.resolution[a]));
    write_pod(out, static_cast<double>(model.density_shift));
    const bool has_mlp = model.decoder_kind == DecoderKind::Mlp;
    write_pod(out, static_cast<std::int32_t>(has_mlp ? model.mlp.hidden_width : 0));
    write_pod(out, static_cast<std::int32_t>(has_mlp ? model.mlp.freq_count : 0));

    const auto arrays = model_arrays(model);
    write_pod(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& arr : arrays) {
        write_pod(out, static_cast<std::uint16_t>(arr.name.size()));
        out.write(arr.name.data(), static_cast<std::streamsize>(arr.name.size()));
        write_pod(out, kDtypeF32);
        write_pod(out, static_cast<std::uint8_t>(arr.dims.size()));
        for (std::int64_t d : arr.dims) write_pod(out, d);
        out.write(reinterpret_cast<const char*>(arr.data),
                  static_cast<std::streamsize>(arr.size * sizeof(float)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

Model<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": not a checkpoint (bad magic)");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));

    Model<float> model;
    const auto mode = read_pod<std::uint8_t>(in, path);
    if (mode > 1) throw std::runtime_error(path + ": invalid field mode tag");
    const auto decoder = read_pod<std::uint8_t>(in, path);
    if (decoder > 1) throw std::runtime_error(path + ": invalid decoder tag");
    model.decoder_kind = static_cast<DecoderKind>(decoder);
    const auto feature_count = read_pod<std::int32_t>(in, path);
    RankConfig ranks;
    for (int m = 0; m < 3; ++m) ranks.density[m] = read_pod<std::int32_t>(in, path);
    for (int m = 0; m < 3; ++m) ranks.appearance[m] = read_pod<std::int32_t>(in, path);
    BBoxd bbox;
    for (int a = 0; a < 3; ++a) bbox.min[a] = read_pod<double>(in, path);
    for (int a = 0; a < 3; ++a) bbox.max[a] = read_pod<double>(in, path);
    Vec3i resolution;
    for (int a = 0; a < 3; ++a) resolution[a] = read_pod<std::int32_t>(in, path);
    const GridGeometry geom{bbox, resolution};
    model.density_shift = static_cast<float>(read_pod<double>(in, path));
    const auto mlp_hidden = read_pod<std::int32_t>(in, path);
    const auto mlp_freq = read_pod<std::int32_t>(in, path);

    const FieldMode field_mode = static_cast<FieldMode>(mode);
    auto make_grid = [&](const Vec3i& counts) {
        DensityField<float> grid;
        grid.mode = field_mode;
        grid.geom = geom;
        for (int m = 0; m < 3; ++m) {
            const Axis axis = static_cast<Axis>(m);
            grid.vectors[m].n = geom.res(axis);
            grid.vectors[m].count = counts[m];
            grid.vectors[m].values.assign(
                static_cast<std::size_t>(grid.vectors[m].n) * counts[m], 0.0f);
            if (field_mode == FieldMode::VM) {
                const Plane plane = plane_of(axis);
                grid.matrices[m].n0 = geom.res(plane_axis0(plane));
                grid.matrices[m].n1 = geom.res(plane_axis1(plane));
                grid.matrices[m].count = counts[m];
                grid.matrices[m].values.assign(static_cast<std::size_t>(grid.matrices[m].n0) *
                                                   grid.matrices[m].n1 * counts[m],
                                               0.0f);
            }
        }
        return grid;
    };
    model.density = make_grid(ranks.density);
    model.appearance.spatial = make_grid(ranks.appearance);
    model.appearance.feature_count = feature_count;
    model.appearance.B.assign(
        static_cast<std::size_t>(feature_count) * model.appearance.stacked_size(), 0.0f);
    if (model.decoder_kind == DecoderKind::Mlp) {
        model.mlp.feature_count = feature_count;
        model.mlp.hidden_width = mlp_hidden;
        model.mlp.freq_count = mlp_freq;
        model.mlp.allocate();
    } else if (feature_count != model.sh.feature_width()) {
        throw std::runtime_error(path + ": SH checkpoint must carry 27 features");
    }

    // Writable views into the freshly allocated arrays, keyed by name.
    ParamSet<float> params = collect_params(model);

    const auto array_count = read_pod<std::uint32_t>(in, path);
    std::vector<bool> filled(params.entries.size(), false);
    for (std::uint32_t i = 0; i < array_count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error(path + ": truncated checkpoint");
        const auto dtype = read_pod<std::uint8_t>(in, path);
        if (dtype != kDtypeF32)
            throw std::runtime_error(path + ": unsupported dtype for array " + name);
        const auto ndim = read_pod<std::uint8_t>(in, path);
        std::size_t total = 1;
        for (int d = 0; d < ndim; ++d) {
            const auto dim = read_pod<std::int64_t>(in, path);
            if (dim <= 0) throw std::runtime_error(path + ": invalid dimension in array " + name);
            total *= static_cast<std::size_t>(dim);
        }
        const int entry = params.index_of(name);
        if (entry < 0) throw std::runtime_error(path + ": unexpected array " + name);
        auto& ref = params.entries[static_cast<std::size_t>(entry)];
        if (total != ref.size)
            throw std::runtime_error(path + ": array " + name + " has " + std::to_string(total) +
                                     " elements, expected " + std::to_string(ref.size));
        in.read(reinterpret_cast<char*>(ref.data),
                static_cast<std::streamsize>(total * sizeof(float)));
        if (!in) throw std::runtime_error(path + ": truncated checkpoint");
        filled[static_cast<std::size_t>(entry)] = true;
    }
    for (std::size_t i = 0; i < filled.size(); ++i)
        if (!filled[i])
            throw std::runtime_error(path + ": missing array " + params.entries[i].name);
    return model;
}

ModelInfo model_info(const Model<float>& model) {
    ModelInfo info;
    info.mode = model.density.mode;
    info.decoder = model.decoder_kind;
    info.feature_count = model.appearance.feature_count;
    for (int m = 0; m < 3; ++m) {
        info.density_ranks[m] = model.density.vectors[m].count;
        info.appearance_ranks[m] = model.appearance.spatial.vectors[m].count;
    }
    info.geometry = model.density.geom;
    info.parameters = parameter_count(model.density, model.appearance);
    if (model.decoder_kind == DecoderKind::Mlp)
        info.parameters += model.mlp.W1.size() + model.mlp.b1.size() + model.mlp.W2.size() +
                           model.mlp.b2.size();
    info.dense_parameters = dense_parameter_count(info.geometry, info.feature_count);
    info.compression_percent =
        100.0 * static_cast<double>(info.parameters) / static_cast<double>(info.dense_parameters);
    return info;
}

}  // namespace tensorf
