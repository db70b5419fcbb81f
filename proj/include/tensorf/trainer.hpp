#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "tensorf/data.hpp"
#include "tensorf/gradients.hpp"
#include "tensorf/model.hpp"
#include "tensorf/optim.hpp"
#include "tensorf/renderer.hpp"
#include "tensorf/threading.hpp"

namespace tensorf {

/// Everything one reconstruction run needs. Learning rates decay over the
/// run: the schedule horizon is total_steps.
struct TrainConfig {
    FieldMode mode = FieldMode::VM;
    DecoderKind decoder = DecoderKind::Mlp;
    RankConfig ranks{};
    int feature_count = 27;

    int batch_size = 4096;
    int total_steps = 30000;
    int n0 = 128;       // initial per-axis voxel budget base (N0^3 voxels)
    int final_n = 300;  // final budget base (N^3 voxels)
    std::vector<int> upsample_steps{2000, 3000, 4000, 5500, 7000};
    std::vector<int> occupancy_steps{2000, 4000};
    int bbox_shrink_step = 2000;

    LossConfig loss{RegKind::L1, 4e-4, 0.1, false};
    double lr_factors = 0.02;
    double lr_decoder = 0.001;
    double lr_final_factor = 0.1;

    double density_shift = -10.0;
    double occupancy_alpha_threshold = 1e-4;
    double alpha_cutoff = 1e-4;
    double termination_tau = 1e-4;
    int max_samples = 2048;

    std::uint64_t seed = 0;
    bool deterministic = false;  // forces a single worker thread
    int trace_interval = 100;
    bool jitter = true;
    bool final_train_eval = true;  // score the train split after the last step

    BBoxd default_bbox{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};  // when the dataset provides none
    double ndc_near = 1.0;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

/// Presets: VM-48, VM-96, VM-192, VM-384, CP-384, VM-48-FF, VM-96-FF.
/// Component counts follow the published per-size splits; -FF presets place
/// the larger count on the Z axis type (its matrix spans the X-Y plane) and
/// switch to TV regularization.
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Per-stage voxel budgets interpolated between n0^3 and n^3 linearly in log
/// space; entry k (1-based) is exp(ln n0^3 + k/S (ln n^3 - ln n0^3)).
std::vector<double> upsample_schedule(int n0, int n, int stage_count);

struct TraceRecord {
    int step = 0;
    double loss = 0.0;
    double l2 = 0.0;
    double reg = 0.0;
    double train_psnr = 0.0;
    double lr_factors = 0.0;
    double lr_decoder = 0.0;
    double wall_seconds = 0.0;
    Vec3i resolution{};
};

/// One flattened ray per training pixel.
struct RaySet {
    std::vector<Ray<float>> rays;
    std::vector<Vec3f> targets;

    std::size_t size() const { return rays.size(); }
};

/// Flattens every pixel of every frame into rays with target colors.
/// Forward-facing datasets are warped into NDC space first.
RaySet build_ray_set(const Dataset& dataset, double ndc_near = 1.0);

struct TrainResult {
    Model<float> model;
    std::vector<TraceRecord> trace;
    OccupancyVolume occupancy;
    bool has_occupancy = false;
    // Evaluation-mode scores on the train split after the final step; NaN
    // when final_train_eval is off or the run had zero steps.
    double final_train_psnr = std::numeric_limits<double>::quiet_NaN();
    double final_train_ssim = std::numeric_limits<double>::quiet_NaN();
};

/// Runs the reconstruction loop: shuffled no-replacement ray batches,
/// hand-derived gradients, Adam updates, and the scheduled upsample ->
/// occupancy refresh -> bbox shrink events at the start of their steps.
/// Trace records (every trace_interval steps and at the last step) go to the
/// returned list and, when given, to `trace_out` as JSON lines.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg,
                  std::ostream* trace_out = nullptr);

/// Evaluation-mode render options for a model trained under `cfg`.
RenderOptions<float> eval_render_options(const TrainConfig& cfg, const GridGeometry& geom);

/// Renders a full camera view (no jitter), parallel over pixels.
ImageF render_view(const Model<float>& model, const Camera& cam,
                   const RenderOptions<float>& opts, const OccupancyVolume* occ, ThreadPool& pool,
                   bool ndc = false, double ndc_near = 1.0);

/// Depth visualization: sum of w_q t_q per pixel, min-max normalized to [0,1].
ImageF render_depth_view(const Model<float>& model, const Camera& cam,
                         const RenderOptions<float>& opts, const OccupancyVolume* occ,
                         ThreadPool& pool, bool ndc = false, double ndc_near = 1.0);

struct EvalRecord {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalResult {
    std::vector<EvalRecord> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

/// Renders every frame of `dataset` and scores it against the stored images.
EvalResult evaluate(const Model<float>& model, const Dataset& dataset,
                    const RenderOptions<float>& opts, const OccupancyVolume* occ,
                    ThreadPool& pool, double ndc_near = 1.0);

}  // namespace tensorf
