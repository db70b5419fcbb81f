#pragma once

#include <cstdint>
#include <string>

#include "tensorf/model.hpp"

namespace tensorf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary model container: "TRFC" magic, version, model tags (mode, decoder,
/// ranks, grid geometry), then named float32 arrays with explicit dimensions,
/// all little-endian. Save -> load -> save is byte identical.
void save_checkpoint(const std::string& path, const Model<float>& model);

Model<float> load_checkpoint(const std::string& path);

/// Size accounting for one model: trainable parameter total (grids, B, and
/// the MLP when present) against the equivalent dense grid with P feature
/// channels plus one density channel.
struct ModelInfo {
    FieldMode mode = FieldMode::VM;
    DecoderKind decoder = DecoderKind::Sh;
    int feature_count = 0;
    Vec3i density_ranks{};
    Vec3i appearance_ranks{};
    GridGeometry geometry;
    std::size_t parameters = 0;
    std::size_t dense_parameters = 0;
    double compression_percent = 0.0;
};

ModelInfo model_info(const Model<float>& model);

}  // namespace tensorf
